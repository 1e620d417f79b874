use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DerivedConstants;

/// Relative tolerance for bounds that are tight at an interval endpoint.
const TIGHT_TOL: f64 = 1e-12;

/// Solution of the Stein equation `g'(x) * (-log N / sqrt N) = h(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteinFn {
    pub eta: f64,
    pub n: usize,
}

impl SteinFn {
    pub fn new(eta: f64, n: usize) -> Self {
        Self { eta, n }
    }

    pub fn from_constants(c: &DerivedConstants) -> Self {
        Self::new(c.eta, c.n)
    }

    /// `sqrt N / log N`.
    pub fn curvature(&self) -> f64 {
        let n = self.n as f64;
        n.sqrt() / n.ln()
    }

    pub fn g(&self, x: f64) -> f64 {
        if x < self.eta {
            0.0
        } else {
            -0.5 * self.curvature() * (x - self.eta).powi(2)
        }
    }

    pub fn g_prime(&self, x: f64) -> f64 {
        if x < self.eta {
            0.0
        } else {
            -self.curvature() * (x - self.eta)
        }
    }

    /// Second derivative; the one-sided value from above at `eta`.
    pub fn g_double_prime(&self, x: f64) -> f64 {
        if x < self.eta {
            0.0
        } else {
            -self.curvature()
        }
    }

    pub fn h(&self, x: f64) -> f64 {
        (x - self.eta).max(0.0)
    }

    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        (self.g(x), self.g_prime(x), self.g_double_prime(x))
    }

    /// `g'(x) * (-log N / sqrt N)`, which should equal `h(x)`.
    pub fn stein_lhs(&self, x: f64) -> f64 {
        let n = self.n as f64;
        self.g_prime(x) * (-n.ln() / n.sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub samples: usize,
    /// `2 / (sqrt N log N)` on `[eta - 2/N, eta + 2/N]`.
    pub g_prime_bound: f64,
    pub g_prime_max: f64,
    pub g_prime_slack: f64,
    pub g_prime_violations: usize,
    /// `sqrt N / log N` for `x > eta`.
    pub g_double_prime_bound: f64,
    pub g_double_prime_max: f64,
    pub g_double_prime_slack: f64,
    pub g_double_prime_violations: usize,
    /// Largest `|g'(x)(-log N/sqrt N) - h(x)|` seen.
    pub stein_identity_error: f64,
}

impl GradientReport {
    pub fn holds(&self) -> bool {
        self.g_prime_violations == 0 && self.g_double_prime_violations == 0
    }
}

/// Checks both gradient bounds on a uniform grid of `samples` points per
/// interval plus `samples` seeded random points per interval.
pub fn gradient_bound_check(consts: &DerivedConstants, samples: usize, seed: u64) -> GradientReport {
    let f = SteinFn::from_constants(consts);
    let n = consts.n as f64;
    let samples = samples.max(2);
    let g1_bound = 2.0 / (n.sqrt() * n.ln());
    let g2_bound = f.curvature();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (lo, hi) = (f.eta - 2.0 / n, f.eta + 2.0 / n);
    let grid = |a: f64, b: f64, i: usize| a + (b - a) * i as f64 / (samples - 1) as f64;
    let first: Vec<f64> = (0..samples)
        .map(|i| grid(lo, hi, i))
        .chain((0..samples).map(|_| rng.random_range(lo..=hi)))
        .collect();
    // Above eta the curvature is constant; sample well past the buffer size.
    let (lo2, hi2) = (f.eta, f.eta + consts.b as f64 + 10.0);
    let second: Vec<f64> = (1..samples)
        .map(|i| grid(lo2, hi2, i))
        .chain((0..samples).map(|_| rng.random_range(lo2..hi2)))
        .filter(|&x| x > f.eta)
        .collect();

    let mut r = GradientReport {
        samples: first.len() + second.len(),
        g_prime_bound: g1_bound,
        g_prime_max: 0.0,
        g_prime_slack: f64::INFINITY,
        g_prime_violations: 0,
        g_double_prime_bound: g2_bound,
        g_double_prime_max: 0.0,
        g_double_prime_slack: f64::INFINITY,
        g_double_prime_violations: 0,
        stein_identity_error: 0.0,
    };
    for &x in &first {
        let v = f.g_prime(x).abs();
        r.g_prime_max = r.g_prime_max.max(v);
        r.g_prime_slack = r.g_prime_slack.min(g1_bound - v);
        if v > g1_bound * (1.0 + TIGHT_TOL) {
            r.g_prime_violations += 1;
        }
    }
    for &x in &second {
        let v = f.g_double_prime(x).abs();
        r.g_double_prime_max = r.g_double_prime_max.max(v);
        r.g_double_prime_slack = r.g_double_prime_slack.min(g2_bound - v);
        if v > g2_bound * (1.0 + TIGHT_TOL) {
            r.g_double_prime_violations += 1;
        }
    }
    for &x in first.iter().chain(&second) {
        r.stein_identity_error = r.stein_identity_error.max((f.stein_lhs(x) - f.h(x)).abs());
    }
    r
}
