//! Verification suites over the built-in grid of small exact instances.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::exact::ExactSolution;
use crate::model::{CoxianParams, HeavyTraffic, SystemConfig};
use crate::policy::{pi_membership_check, PolicyKind};
use crate::stein::{
    calibrate_spec, corollary_bounds, drift_condition_scan, gradient_bound_check, ssc1_min_departure, ssc_flags,
    stein_decomposition, stein_decomposition_at, tail_bound_verify, CheckRecord, CheckStatus, DerivedConstants,
    LyapunovFn, IDENTITY_TOL,
};

pub const BUILTIN_LAMBDA: f64 = 0.9;
pub const BUILTIN_ALPHA: f64 = 0.3;
/// Thresholds inside the support of small instances, where the Stein terms do not vanish.
pub const IN_SUPPORT_ETAS: [f64; 5] = [0.3, 0.5, 0.75, 1.0, 1.6];
pub const GRADIENT_SAMPLES: usize = 2_500;
pub const STEIN_EQUATION_TOL: f64 = 1e-12;
pub const MAX_TAIL_STEPS: usize = 10_000;
pub const CORNER_GRID: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Stein,
    Drift,
    Tail,
    Ssc,
    Pi,
    Corollary,
}

impl Suite {
    pub const ALL: [Suite; 6] = [Suite::Stein, Suite::Drift, Suite::Tail, Suite::Ssc, Suite::Pi, Suite::Corollary];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Stein => "stein",
            Suite::Drift => "drift",
            Suite::Tail => "tail",
            Suite::Ssc => "ssc",
            Suite::Pi => "pi",
            Suite::Corollary => "corollary",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite {s:?}; expected one of stein, drift, tail, ssc, pi, corollary")))
    }
}

/// `(2, 1, 0.5)`, exponential service, and a long second phase.
pub fn builtin_coxians() -> [CoxianParams; 3] {
    [
        CoxianParams { mu1: 2.0, mu2: 1.0, p: 0.5 },
        CoxianParams { mu1: 1.0, mu2: 1.0, p: 0.0 },
        CoxianParams { mu1: 4.0, mu2: 1.2, p: 0.9 },
    ]
}

pub fn builtin_policies() -> [PolicyKind; 4] {
    [PolicyKind::Jsq, PolicyKind::Jiq, PolicyKind::I1f, PolicyKind::pod(2)]
}

/// Every `N <= 4`, `b <= 3`, built-in Coxian set and policy valid at `N`.
/// `policies` replaces the built-in policy list when given.
pub fn builtin_instances(policies: Option<&[PolicyKind]>, heavy_traffic: Option<HeavyTraffic>) -> Vec<SystemConfig> {
    let default = builtin_policies();
    let policies = policies.unwrap_or(&default);
    let mut out = Vec::new();
    for cox in builtin_coxians() {
        for n in 1..=4 {
            for b in 1..=3 {
                for &policy in policies {
                    let cfg = match heavy_traffic {
                        Some(ht) => SystemConfig::with_heavy_traffic(n, b, ht, cox, policy),
                        None => SystemConfig::new(n, b, BUILTIN_LAMBDA, cox, policy),
                    };
                    if let Ok(cfg) = cfg {
                        out.push(cfg);
                    }
                }
            }
        }
    }
    out
}

pub fn instance_json(cfg: &SystemConfig) -> serde_json::Value {
    let mut v = json!({
        "n": cfg.n,
        "b": cfg.b,
        "lambda": cfg.lambda,
        "mu1": cfg.coxian.mu1,
        "mu2": cfg.coxian.mu2,
        "p": cfg.coxian.p,
        "policy": cfg.policy.to_string(),
    });
    if let Some(ht) = cfg.heavy_traffic {
        v["alpha"] = json!(ht.alpha);
        v["beta"] = json!(ht.beta);
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub instances: usize,
    pub pass: usize,
    pub fail: usize,
    pub inapplicable: usize,
    pub records: Vec<CheckRecord>,
}

impl VerifyReport {
    fn new(suite: Suite, instances: usize, records: Vec<CheckRecord>) -> Self {
        let count = |s: CheckStatus| records.iter().filter(|r| r.status == s).count();
        Self {
            suite,
            instances,
            pass: count(CheckStatus::Pass),
            fail: count(CheckStatus::Fail),
            inapplicable: count(CheckStatus::Inapplicable),
            records,
        }
    }

    /// No hard failure; inapplicable results never fail a run.
    pub fn passed(&self) -> bool {
        self.fail == 0
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRecord> {
        self.records.iter().filter(|r| r.status.is_fail())
    }
}

/// Options for a suite run.
#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    /// Replaces the built-in policy list.
    pub policies: Option<Vec<PolicyKind>>,
    /// Checked in addition to the grid.
    pub user_instance: Option<SystemConfig>,
    pub cap: usize,
    pub seed: u64,
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Result<VerifyReport> {
    let ht = (suite == Suite::Corollary).then_some(HeavyTraffic { alpha: BUILTIN_ALPHA, beta: 1.0 });
    let mut instances = builtin_instances(opts.policies.as_deref(), ht);
    if let Some(u) = &opts.user_instance {
        instances.push(u.clone());
    }
    let per_instance: Vec<Vec<CheckRecord>> = instances
        .par_iter()
        .map(|cfg| match suite {
            Suite::Stein => stein_checks(cfg, opts),
            Suite::Drift => drift_checks(cfg, opts),
            Suite::Tail => tail_checks(cfg, opts),
            Suite::Ssc => ssc_checks(cfg, opts),
            Suite::Pi => pi_checks(cfg),
            Suite::Corollary => corollary_checks(cfg, opts),
        })
        .collect::<Result<_>>()?;
    let mut records: Vec<CheckRecord> = per_instance.into_iter().flatten().collect();
    if suite == Suite::Corollary {
        records.extend(corollary_scaling_checks()?);
    }
    Ok(VerifyReport::new(suite, instances.len(), records))
}

/// At `N = 1` the scale `log N` vanishes and the Stein solution is undefined.
fn log_scale_undefined(cfg: &SystemConfig, check_id: &str) -> Option<Vec<CheckRecord>> {
    (cfg.n < 2).then(|| {
        vec![CheckRecord::new(check_id, instance_json(cfg), CheckStatus::Inapplicable).note("log N = 0 at N = 1")]
    })
}

fn stein_checks(cfg: &SystemConfig, opts: &VerifyOptions) -> Result<Vec<CheckRecord>> {
    if let Some(r) = log_scale_undefined(cfg, "stein") {
        return Ok(r);
    }
    let inst = instance_json(cfg);
    let c = DerivedConstants::from_config(cfg)?;
    let sol = ExactSolution::solve(cfg, opts.cap)?;
    let mut out = stein_decomposition(&sol)?.records(&inst);

    let mut worst = 0.0f64;
    for eta in IN_SUPPORT_ETAS {
        let d = stein_decomposition_at(&sol, eta)?;
        worst = worst.max(d.identity_error).max(d.split_error());
    }
    out.push(
        CheckRecord::new("stein.identity_in_support", inst.clone(), CheckStatus::hard(worst <= IDENTITY_TOL))
            .slack(IDENTITY_TOL - worst),
    );

    let g = gradient_bound_check(&c, GRADIENT_SAMPLES, opts.seed);
    out.push(
        CheckRecord::new("stein.gradient_bounds", inst.clone(), CheckStatus::hard(g.holds()))
            .slack(g.g_prime_slack.min(g.g_double_prime_slack)),
    );
    out.push(
        CheckRecord::new(
            "stein.equation",
            inst,
            CheckStatus::hard(g.stein_identity_error <= STEIN_EQUATION_TOL),
        )
        .slack(STEIN_EQUATION_TOL - g.stein_identity_error),
    );
    Ok(out)
}

fn drift_checks(cfg: &SystemConfig, opts: &VerifyOptions) -> Result<Vec<CheckRecord>> {
    let inst = instance_json(cfg);
    let mut out = Vec::new();
    for v in LyapunovFn::ALL {
        out.extend(drift_condition_scan(v, cfg, opts.cap)?.records(&inst));
    }
    Ok(out)
}

/// Number of tail levels needed to pass the largest value of `v` on the support.
pub fn tail_steps_to_support_edge(sol: &ExactSolution, v: LyapunovFn, threshold: f64, nu_max: f64) -> Result<usize> {
    let c = DerivedConstants::from_config(&sol.cfg)?;
    let top = sol.support().map(|(s, _)| v.value(s, &c)).fold(f64::NEG_INFINITY, f64::max);
    if nu_max <= 0.0 || top < threshold {
        return Ok(0);
    }
    Ok((((top - threshold) / (2.0 * nu_max)).ceil() as usize + 1).min(MAX_TAIL_STEPS))
}

fn tail_checks(cfg: &SystemConfig, opts: &VerifyOptions) -> Result<Vec<CheckRecord>> {
    let inst = instance_json(cfg);
    let sol = ExactSolution::solve(cfg, opts.cap)?;
    let mut out = Vec::new();
    for v in LyapunovFn::ALL {
        let spec = calibrate_spec(&sol, v)?;
        let j_max = tail_steps_to_support_edge(&sol, v, spec.threshold, spec.nu_max)?;
        out.push(tail_bound_verify(&sol, &spec, j_max)?.record(&inst));
    }
    Ok(out)
}

fn ssc_checks(cfg: &SystemConfig, opts: &VerifyOptions) -> Result<Vec<CheckRecord>> {
    let inst = instance_json(cfg);
    let c = DerivedConstants::from_config(cfg)?;
    let corner = ssc1_min_departure(&c, CORNER_GRID);
    let mut out = vec![CheckRecord::new("ssc.ssc1_corner", inst.clone(), CheckStatus::hard(corner.holds()))
        .slack((corner.min_departure - corner.required).min(1e-9 - corner.grid_gap.abs()))];

    let space = crate::exact::enumerate_states(cfg.n, cfg.b, opts.cap)?;
    let bad = space.states.iter().find(|s| !ssc_flags(s, &c).containment_holds());
    out.push(
        CheckRecord::new("ssc.containment", inst, CheckStatus::hard(bad.is_none())).witness(bad.map(|s| s.to_flat())),
    );
    Ok(out)
}

fn pi_checks(cfg: &SystemConfig) -> Result<Vec<CheckRecord>> {
    let r = pi_membership_check(&cfg.policy, cfg)?;
    let limit = 1.0 / (cfg.n as f64).sqrt();
    let mut rec = CheckRecord::new("pi.membership", instance_json(cfg), CheckStatus::hard(r.holds))
        .slack(limit - r.worst_a1)
        .witness(r.witnesses.first().map(|s| s.to_flat()));
    if r.vacuous_threshold {
        rec = rec.note("threshold at or above one; checked on states with an idle server");
    }
    if !r.exhaustive {
        rec = rec.note(format!("sampled {} states", r.states_checked));
    }
    Ok(vec![rec])
}

fn corollary_checks(cfg: &SystemConfig, opts: &VerifyOptions) -> Result<Vec<CheckRecord>> {
    if let Some(r) = log_scale_undefined(cfg, "corollary") {
        return Ok(r);
    }
    let inst = instance_json(cfg);
    let c = DerivedConstants::from_config(cfg)?;
    let bounds = corollary_bounds(&c, cfg)?;
    let m = ExactSolution::solve(cfg, opts.cap)?.metrics();
    let (p_w_bound, p_w_applies) = bounds.p_wait_bound(&cfg.policy);
    let mut out = vec![CheckRecord::new("corollary.p_wait", inst.clone(), CheckStatus::conditional(m.p_wait <= p_w_bound, p_w_applies))
        .slack(p_w_bound - m.p_wait)];
    if let Some(w) = m.mean_wait {
        if matches!(cfg.policy, PolicyKind::Jsq | PolicyKind::Pod { .. }) {
            out.push(
                CheckRecord::new(
                    "corollary.mean_wait",
                    inst.clone(),
                    CheckStatus::conditional(w <= bounds.e_w_bound, bounds.applicable_jsq_pod),
                )
                .slack(bounds.e_w_bound - w),
            );
        }
    }
    if let Some(pb) = bounds.p_block_bound(&cfg.policy) {
        out.push(
            CheckRecord::new("corollary.p_block", inst, CheckStatus::conditional(m.p_block <= pb, bounds.applicable_jsq_pod))
                .slack(pb - m.p_block),
        );
    }
    Ok(out)
}

/// The closed forms are finite, positive and nonincreasing in `N` once
/// `log N / sqrt N` is decreasing (`N >= 8`).
fn corollary_scaling_checks() -> Result<Vec<CheckRecord>> {
    let grid: Vec<usize> = (3..=20).map(|k| 1usize << k).collect();
    let mut out = Vec::new();
    for cox in builtin_coxians() {
        let ht = HeavyTraffic { alpha: BUILTIN_ALPHA, beta: 1.0 };
        let mut rows = Vec::new();
        for &n in &grid {
            let cfg = SystemConfig::with_heavy_traffic(n, 4, ht, cox, PolicyKind::Jsq)?;
            let b = corollary_bounds(&DerivedConstants::from_config(&cfg)?, &cfg)?;
            rows.push([b.e_w_bound, b.p_w_bound_jsq_pod, b.p_w_bound_jiq_i1f, b.p_b_bound_jsq, b.p_b_bound_pod]);
        }
        let inst = json!({ "mu1": cox.mu1, "mu2": cox.mu2, "p": cox.p, "b": 4, "alpha": BUILTIN_ALPHA, "n_grid": grid });
        let finite = rows.iter().flatten().all(|v| v.is_finite() && *v > 0.0);
        out.push(CheckRecord::new("corollary.finite", inst.clone(), CheckStatus::hard(finite)));
        let monotone = rows.windows(2).all(|w| (0..5).all(|k| w[1][k] <= w[0][k]));
        out.push(CheckRecord::new("corollary.monotone", inst, CheckStatus::hard(monotone)));
    }
    Ok(out)
}
