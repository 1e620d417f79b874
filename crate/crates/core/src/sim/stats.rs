//! Equal-time batch means with Student-t confidence intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Point estimate with batch-means CI half-widths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci95: f64,
    pub ci99: f64,
    /// One-sided 95% upper bound when the event was never observed.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub zero_count_upper: Option<f64>,
}

impl Estimate {
    pub fn contains(&self, value: f64, widths: f64) -> bool {
        (self.mean - value).abs() <= widths * self.ci99
    }

    /// Whether two 95% intervals intersect.
    pub fn overlaps95(&self, other: &Estimate) -> bool {
        (self.mean - other.mean).abs() <= self.ci95 + other.ci95
    }
}

/// `t_{q, dof}` quantile.
pub fn t_quantile(q: f64, dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64).expect("positive dof").inverse_cdf(q)
}

/// Estimate from the pooled value and per-batch values.
pub fn batch_estimate(pooled: f64, batches: &[f64]) -> Estimate {
    let k = batches.len();
    if k < 2 || batches.iter().any(|v| !v.is_finite()) {
        return Estimate { mean: pooled, ci95: f64::NAN, ci99: f64::NAN, zero_count_upper: None };
    }
    let mean = batches.iter().sum::<f64>() / k as f64;
    let var = batches.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    let se = (var / k as f64).sqrt();
    Estimate {
        mean: pooled,
        ci95: t_quantile(0.975, k - 1) * se,
        ci99: t_quantile(0.995, k - 1) * se,
        zero_count_upper: None,
    }
}

/// `1 - 0.05^(1/k)`: with no event in `k` independent batches, the largest
/// per-batch event probability not rejected at level 0.05.
pub fn zero_count_upper(batches: usize) -> f64 {
    1.0 - 0.05f64.powf(1.0 / batches as f64)
}

/// Estimate of a probability; adds the zero-count bound when nothing was seen.
pub fn rare_estimate(pooled: f64, batches: &[f64]) -> Estimate {
    let mut e = batch_estimate(pooled, batches);
    if pooled == 0.0 {
        e.zero_count_upper = Some(zero_count_upper(batches.len()));
    }
    e
}
