//! Closed-form waiting and blocking bounds with their side conditions.

use serde::{Deserialize, Serialize};

use super::DerivedConstants;
use crate::error::{Error, Result};
use crate::model::SystemConfig;
use crate::policy::PolicyKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorollaryBounds {
    pub n: usize,
    pub alpha: f64,
    pub e_w_bound: f64,
    pub p_w_bound_jsq_pod: f64,
    pub p_w_bound_jiq_i1f: f64,
    pub p_b_bound_jsq: f64,
    /// Adds the `1/N` chance that every sampled server is full.
    pub p_b_bound_pod: f64,
    pub n_condition: bool,
    /// `sqrt N >= 8k log N/(b - lambda) + 8b N^(0.5-alpha)/((b - lambda) mu1)`.
    pub sqrt_n_condition: bool,
    /// `N^(0.5-alpha) >= 2k log N`.
    pub jiq_condition: bool,
    /// `d >= mu1 N^alpha log N`, only for power-of-d.
    pub pod_d_condition: Option<bool>,
    pub applicable_jsq_pod: bool,
    pub applicable_jiq_i1f: bool,
}

impl CorollaryBounds {
    /// Waiting-probability bound for the configured policy and whether it applies.
    pub fn p_wait_bound(&self, policy: &PolicyKind) -> (f64, bool) {
        match policy {
            PolicyKind::Jsq | PolicyKind::Pod { .. } => (self.p_w_bound_jsq_pod, self.applicable_jsq_pod),
            PolicyKind::Jiq | PolicyKind::I1f => (self.p_w_bound_jiq_i1f, self.applicable_jiq_i1f),
        }
    }

    /// Blocking bound; none is available for JIQ or I1F.
    pub fn p_block_bound(&self, policy: &PolicyKind) -> Option<f64> {
        match policy {
            PolicyKind::Jsq => Some(self.p_b_bound_jsq),
            PolicyKind::Pod { .. } => Some(self.p_b_bound_pod),
            PolicyKind::Jiq | PolicyKind::I1f => None,
        }
    }
}

/// Pure formula evaluation at `(N, alpha)` for the given constants.
pub fn corollary_formulas(c: &DerivedConstants, alpha: f64) -> (f64, f64, f64, f64) {
    let n = c.n as f64;
    let (log_n, sqrt_n) = (n.ln(), n.sqrt());
    let gap = c.b as f64 - c.lambda;
    let mu = c.mu_max;
    let e_w = 2.0 * c.k * log_n / sqrt_n + (14.0 * mu + 16.0 * mu / gap) / (sqrt_n * log_n);
    let p_w = 1.0 / n + mu / c.lambda * (c.k * log_n / sqrt_n + (7.0 * mu + 8.0 * mu / gap) / (sqrt_n * log_n));
    let p_w_jiq = 14.0 * mu / (n.powf(0.5 - alpha) * log_n);
    let p_b = 8.0 * mu / (gap * sqrt_n * log_n);
    (e_w, p_w, p_w_jiq, p_b)
}

pub fn corollary_bounds(c: &DerivedConstants, cfg: &SystemConfig) -> Result<CorollaryBounds> {
    let alpha = cfg.heavy_traffic.ok_or(Error::MissingHeavyTraffic("the delay bounds"))?.alpha;
    let n = c.n as f64;
    let (log_n, sqrt_n) = (n.ln(), n.sqrt());
    let gap = c.b as f64 - c.lambda;
    let (e_w_bound, p_w_bound_jsq_pod, p_w_bound_jiq_i1f, p_b_bound_jsq) = corollary_formulas(c, alpha);

    let n_condition = c.large_n_condition(Some(alpha));
    let sqrt_n_condition =
        sqrt_n >= 8.0 * c.k * log_n / gap + 8.0 * c.b as f64 * n.powf(0.5 - alpha) / (gap * c.mu1);
    let jiq_condition = n.powf(0.5 - alpha) >= 2.0 * c.k * log_n;
    let pod_d_condition = cfg.policy.d().map(|d| d as f64 >= c.mu1 * n.powf(alpha) * log_n);
    Ok(CorollaryBounds {
        n: c.n,
        alpha,
        e_w_bound,
        p_w_bound_jsq_pod,
        p_w_bound_jiq_i1f,
        p_b_bound_jsq,
        p_b_bound_pod: 1.0 / n + p_b_bound_jsq,
        n_condition,
        sqrt_n_condition,
        jiq_condition,
        pod_d_condition,
        applicable_jsq_pod: n_condition && sqrt_n_condition && pod_d_condition.unwrap_or(true),
        applicable_jiq_i1f: n_condition && jiq_condition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoxianParams, HeavyTraffic};

    fn bounds(n: usize, policy: PolicyKind) -> CorollaryBounds {
        let cox = CoxianParams::new(2.0, 1.0, 0.5).unwrap();
        let cfg = SystemConfig::with_heavy_traffic(n, 4, HeavyTraffic::new(0.3, 0.5).unwrap(), cox, policy).unwrap();
        corollary_bounds(&DerivedConstants::from_config(&cfg).unwrap(), &cfg).unwrap()
    }

    #[test]
    fn jiq_bound_value() {
        let b = bounds(64_000, PolicyKind::Jiq);
        let expected = 28.0 / (64_000f64.powf(0.2) * 64_000f64.ln());
        assert!((b.p_w_bound_jiq_i1f - expected).abs() < 1e-15);
        assert!((b.p_w_bound_jiq_i1f - 0.2766).abs() < 1e-4);
    }

    #[test]
    fn jiq_side_condition_fails_at_small_n() {
        let b = bounds(100, PolicyKind::Jiq);
        assert!(!b.jiq_condition);
        assert!(!b.applicable_jiq_i1f);
    }

    #[test]
    fn requires_heavy_traffic() {
        let cox = CoxianParams::new(2.0, 1.0, 0.5).unwrap();
        let cfg = SystemConfig::new(100, 4, 0.9, cox, PolicyKind::Jsq).unwrap();
        let c = DerivedConstants::from_config(&cfg).unwrap();
        assert!(matches!(corollary_bounds(&c, &cfg), Err(Error::MissingHeavyTraffic(_))));
    }

    #[test]
    fn pod_flags_sample_size() {
        assert_eq!(bounds(100, PolicyKind::pod(2)).pod_d_condition, Some(false));
        assert_eq!(bounds(100, PolicyKind::pod(100)).pod_d_condition, Some(true));
        assert_eq!(bounds(100, PolicyKind::Jsq).pod_d_condition, None);
    }
}
