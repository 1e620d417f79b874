use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::SystemConfig;

/// Constants of the steady-state bound, the collapse sets and the delay corollary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub n: usize,
    pub b: usize,
    pub lambda: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub p: f64,
    /// `log N / sqrt N`.
    pub log_scale: f64,
    pub w_u: f64,
    pub w_l: f64,
    pub mu_max: f64,
    pub k: f64,
    pub c1: f64,
    pub eta: f64,
    pub l11: f64,
    pub l12: f64,
    pub t_q_bar: f64,
}

impl DerivedConstants {
    /// Refuses Coxian parameters whose mean service time is not one.
    pub fn from_config(cfg: &SystemConfig) -> Result<Self> {
        cfg.coxian.require_normalized()?;
        let (mu1, mu2, p) = (cfg.coxian.mu1, cfg.coxian.mu2, cfg.coxian.p);
        let b = cfg.b as f64;
        let log_scale = cfg.log_scale();
        let w_u = ((1.0 - p) * mu1).max(mu2);
        let w_l = ((1.0 - p) * mu1).min(mu2);
        let inner = (1.0 + mu1 + mu2) / w_l + 2.0 * mu1;
        let k = (1.0 + w_u * b / w_l) * inner;
        let c1 = (w_u * b / w_l) * inner + 2.0 * mu1;
        Ok(Self {
            n: cfg.n,
            b: cfg.b,
            lambda: cfg.lambda,
            mu1,
            mu2,
            p,
            log_scale,
            w_u,
            w_l,
            mu_max: mu1.max(mu2),
            k,
            c1,
            eta: cfg.lambda + k * log_scale,
            l11: cfg.lambda / mu1 - log_scale,
            l12: p * cfg.lambda / mu2 - mu1 * log_scale,
            t_q_bar: (1.0 / mu1).min(1.0 / mu2),
        })
    }

    /// `(1 + mu1 + mu2) / w_l`, equal to `k - c1`.
    pub fn busy_margin(&self) -> f64 {
        (1.0 + self.mu1 + self.mu2) / self.w_l
    }

    /// `h(x) = max{x - eta, 0}`.
    pub fn excess(&self, total: f64) -> f64 {
        (total - self.eta).max(0.0)
    }

    pub fn log_n(&self) -> f64 {
        (self.n as f64).ln()
    }

    pub fn sqrt_n(&self) -> f64 {
        (self.n as f64).sqrt()
    }

    /// Smallest of the three exponent rates in the large-N condition.
    pub fn exponent_rate(&self) -> f64 {
        (self.mu1 / (16.0 * self.mu_max))
            .min(self.mu2 / (12.0 * self.mu_max))
            .min(self.mu1 * self.mu2 / (40.0 * self.mu_max))
    }

    /// Both sides of the large-N condition on `log N`. The upper side needs
    /// the heavy-traffic exponent; without it only the lower side is checked.
    pub fn large_n_condition(&self, alpha: Option<f64>) -> bool {
        let log_n = self.log_n();
        let lower = log_n >= 3.5 / self.exponent_rate();
        let upper = match alpha {
            Some(a) => self.w_l * (self.n as f64).powf(0.5 - a) / (1.0 + self.mu1 + self.mu2) >= log_n,
            None => true,
        };
        lower && upper
    }

    /// `7 mu_max / (sqrt N log N)`.
    pub fn theorem_bound(&self) -> f64 {
        7.0 * self.mu_max / (self.sqrt_n() * self.log_n())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CoxianParams;
    use crate::policy::PolicyKind;

    fn consts(mu1: f64, mu2: f64, p: f64, b: usize) -> DerivedConstants {
        let cfg = SystemConfig::new(100, b, 0.9, CoxianParams::new(mu1, mu2, p).unwrap(), PolicyKind::Jsq).unwrap();
        DerivedConstants::from_config(&cfg).unwrap()
    }

    #[test]
    fn reference_values() {
        let c = consts(2.0, 1.0, 0.5, 4);
        assert_eq!((c.w_u, c.w_l, c.mu_max), (1.0, 1.0, 2.0));
        assert_eq!(c.k, 40.0);
        assert_eq!(c.c1, 36.0);

        let c = consts(1.0, 1.0, 0.0, 2);
        assert_eq!((c.w_u, c.w_l), (1.0, 1.0));
        assert_eq!(c.k, 15.0);
        assert_eq!(c.c1, 12.0);
    }

    #[test]
    fn k_minus_c1_identity() {
        for (mu1, p, b) in [(2.0, 0.5, 4), (4.0, 0.9, 3), (1.5, 0.2, 7), (1.0, 0.0, 1)] {
            let mu2 = if p == 0.0 { 1.0 } else { p / (1.0 - 1.0 / mu1) };
            let c = consts(mu1, mu2, p, b);
            assert!((c.k - c.c1 - c.busy_margin()).abs() <= 1e-12 * c.k);
            assert!(c.k > 0.0 && c.c1 > 0.0 && c.w_l > 0.0 && c.t_q_bar > 0.0);
        }
    }

    #[test]
    fn unnormalized_is_refused() {
        let cfg = SystemConfig::new(10, 2, 0.9, CoxianParams::new(1.0, 1.0, 0.5).unwrap(), PolicyKind::Jsq).unwrap();
        assert!(DerivedConstants::from_config(&cfg).is_err());
    }
}
