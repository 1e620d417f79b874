//! Lyapunov drifts, the per-state drift lemmas and the conditioned tail bound.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CheckRecord, CheckStatus, DerivedConstants};
use crate::error::{Error, Result};
use crate::exact::{enumerate_states, ExactSolution};
use crate::model::{apply_generator, AggregateState, Phase, SystemConfig};
use crate::policy::{fill_routing, pi_membership_check, RoutingDistribution};

/// Slack on premise boundaries: states on a boundary count as inside.
const PREMISE_TOL: f64 = 1e-12;
/// Allowed excess of a drift over its claimed bound (rounding only).
const DRIFT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LyapunovFn {
    /// `s_{1,2} - p/mu2`.
    VA,
    /// `lambda/mu1 - s_{1,1}`.
    VB,
    /// `p lambda/mu2 - s_{1,2}`.
    VC,
    /// `min{eta - s_1, sum_{i>=2} s_i}`.
    VD,
}

impl LyapunovFn {
    pub const ALL: [LyapunovFn; 4] = [LyapunovFn::VA, LyapunovFn::VB, LyapunovFn::VC, LyapunovFn::VD];

    pub fn id(self) -> &'static str {
        match self {
            LyapunovFn::VA => "v_a",
            LyapunovFn::VB => "v_b",
            LyapunovFn::VC => "v_c",
            LyapunovFn::VD => "v_d",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.id() == s.to_ascii_lowercase())
    }

    pub fn value(self, state: &AggregateState, c: &DerivedConstants) -> f64 {
        match self {
            LyapunovFn::VA => state.s(1, Phase::Second) - c.p / c.mu2,
            LyapunovFn::VB => c.lambda / c.mu1 - state.s(1, Phase::First),
            LyapunovFn::VC => c.p * c.lambda / c.mu2 - state.s(1, Phase::Second),
            LyapunovFn::VD => {
                let tail: f64 = (2..=state.b()).map(|i| state.s_level(i)).sum();
                (c.eta - state.s_level(1)).min(tail)
            }
        }
    }

    /// Closed-form drift; `None` for the piecewise `V_D`.
    pub fn closed_form_drift(self, state: &AggregateState, routing: &RoutingDistribution, c: &DerivedConstants) -> Option<f64> {
        let (s11, s12) = (state.s(1, Phase::First), state.s(1, Phase::Second));
        let phase_balance = c.p * c.mu1 * s11 - c.mu2 * s12;
        match self {
            LyapunovFn::VA => Some(phase_balance),
            LyapunovFn::VB => Some(
                -c.lambda * (1.0 - routing.a1()) + c.mu1 * s11
                    - (1.0 - c.p) * c.mu1 * state.s(2, Phase::First)
                    - c.mu2 * state.s(2, Phase::Second),
            ),
            LyapunovFn::VC => Some(-phase_balance),
            LyapunovFn::VD => None,
        }
    }
}

impl fmt::Display for LyapunovFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// `sum_{s'} q(s, s') (V(s') - V(s))` under the configured policy.
pub fn lyapunov_drift(v: LyapunovFn, state: &AggregateState, cfg: &SystemConfig) -> Result<f64> {
    let c = DerivedConstants::from_config(cfg)?;
    let mut routing = RoutingDistribution::zeros(cfg.b);
    fill_routing(&cfg.policy, state, &mut routing);
    Ok(apply_generator(|s| v.value(s, &c), state, &routing, cfg))
}

/// Conditioning sets of the drift lemmas, boundaries included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "at", rename_all = "snake_case")]
pub enum Region {
    All,
    S12AtMost(f64),
    S12AtLeast(f64),
    S11AtLeast(f64),
    S11AtMost(f64),
    /// `s_{1,1} >= a` and `s_{1,2} >= b`.
    Both(f64, f64),
    /// `s_{1,1} <= a` or `s_{1,2} <= b`.
    EitherBelow(f64, f64),
}

impl Region {
    pub fn contains(&self, state: &AggregateState) -> bool {
        let (s11, s12) = (state.s(1, Phase::First), state.s(1, Phase::Second));
        match *self {
            Region::All => true,
            Region::S12AtMost(x) => s12 <= x + PREMISE_TOL,
            Region::S12AtLeast(x) => s12 >= x - PREMISE_TOL,
            Region::S11AtLeast(x) => s11 >= x - PREMISE_TOL,
            Region::S11AtMost(x) => s11 <= x + PREMISE_TOL,
            Region::Both(a, b) => s11 >= a - PREMISE_TOL && s12 >= b - PREMISE_TOL,
            Region::EitherBelow(a, b) => s11 <= a + PREMISE_TOL || s12 <= b + PREMISE_TOL,
        }
    }
}

/// `V >= threshold` and `region` imply `drift <= bound`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftClaim {
    pub check_id: &'static str,
    pub lyapunov: LyapunovFn,
    pub threshold: f64,
    pub region: Region,
    pub bound: f64,
    /// Holds at every N; otherwise its proof needs side conditions.
    pub hard: bool,
}

/// The drift threshold `B` and the set `E` each lemma conditions on.
pub fn lemma_threshold_and_region(v: LyapunovFn, c: &DerivedConstants) -> (f64, Region) {
    let l = c.log_scale;
    match v {
        LyapunovFn::VA => (l / 4.0, Region::All),
        LyapunovFn::VB => (l / 2.0, Region::S12AtMost(c.p / c.mu2 + l / 2.0)),
        LyapunovFn::VC => ((c.p * c.mu1 / c.mu2 + 0.5) * l, Region::S11AtLeast(c.l11)),
        LyapunovFn::VD => (c.c1 * l, Region::Both(c.l11, c.l12)),
    }
}

pub fn drift_claims(v: LyapunovFn, c: &DerivedConstants) -> Vec<DriftClaim> {
    let l = c.log_scale;
    let (threshold, region) = lemma_threshold_and_region(v, c);
    let claim = |check_id, region, bound, hard| DriftClaim { check_id, lyapunov: v, threshold, region, bound, hard };
    match v {
        LyapunovFn::VA => vec![claim("drift.v_a", region, -c.mu1 * c.mu2 / 4.0 * l, true)],
        LyapunovFn::VB => vec![
            claim("drift.v_b.in", region, -c.mu1 / 3.0 * l, false),
            claim("drift.v_b.out", Region::S12AtLeast(c.p / c.mu2 + l / 2.0), 1.0, true),
        ],
        LyapunovFn::VC => vec![
            claim("drift.v_c.in", region, -c.mu2 / 2.0 * l, true),
            claim("drift.v_c.out", Region::S11AtMost(c.l11), 1.0, true),
        ],
        LyapunovFn::VD => vec![
            claim("drift.v_d.in", region, -c.w_u * c.mu1 * l, false),
            claim("drift.v_d.out", Region::EitherBelow(c.l11, c.l12), c.w_u, true),
        ],
    }
}

/// Side conditions used by the proofs of the two conditional claims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideConditions {
    /// `A_1 <= 1/sqrt N` wherever `s_1` is below the policy threshold, with
    /// that threshold below one.
    pub policy_condition: bool,
    /// `1/sqrt N <= (mu1/6) log N / sqrt N`.
    pub v_b_rate: bool,
    /// `1 - (1 - lambda)/mu1 <= lambda + (1+mu1+mu2)/w_l * log N / sqrt N`.
    pub v_b_load: bool,
    /// `(mu1 + mu2 - w_u) log N >= 1` and `w_u mu1 log N >= 1`.
    pub v_d_rate: bool,
}

impl SideConditions {
    pub fn evaluate(cfg: &SystemConfig, c: &DerivedConstants) -> Result<Self> {
        let pi = pi_membership_check(&cfg.policy, cfg)?;
        let log_n = c.log_n();
        Ok(Self {
            policy_condition: pi.holds && !pi.vacuous_threshold,
            v_b_rate: c.mu1 / 6.0 * log_n >= 1.0,
            v_b_load: 1.0 - (1.0 - c.lambda) / c.mu1 <= c.lambda + c.busy_margin() * c.log_scale,
            v_d_rate: (c.mu1 + c.mu2 - c.w_u) * log_n >= 1.0 && c.w_u * c.mu1 * log_n >= 1.0,
        })
    }

    pub fn applies(&self, claim: &DriftClaim) -> bool {
        if claim.hard {
            return true;
        }
        match claim.lyapunov {
            LyapunovFn::VB => self.policy_condition && self.v_b_rate && self.v_b_load,
            LyapunovFn::VD => self.policy_condition && self.v_d_rate,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClaimReport {
    pub claim: DriftClaim,
    pub applicable: bool,
    pub premise_states: usize,
    pub holds: bool,
    pub worst_slack: f64,
    pub worst_state: Option<AggregateState>,
    pub violations: usize,
    pub status: CheckStatus,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftScanReport {
    pub lyapunov: LyapunovFn,
    pub states_scanned: usize,
    /// Largest gap between the generator drift and the closed form.
    pub closed_form_error: Option<f64>,
    pub side_conditions: SideConditions,
    pub claims: Vec<ClaimReport>,
}

pub const CLOSED_FORM_TOL: f64 = 1e-10;

impl DriftScanReport {
    pub fn records(&self, instance: &serde_json::Value) -> Vec<CheckRecord> {
        let mut out = Vec::new();
        if let Some(err) = self.closed_form_error {
            out.push(
                CheckRecord::new(
                    format!("drift.{}.closed_form", self.lyapunov),
                    instance.clone(),
                    CheckStatus::hard(err <= CLOSED_FORM_TOL),
                )
                .slack(CLOSED_FORM_TOL - err),
            );
        }
        for c in &self.claims {
            let mut r = CheckRecord::new(c.claim.check_id, instance.clone(), c.status)
                .slack(c.worst_slack)
                .witness(if c.holds { None } else { c.worst_state.as_ref().map(AggregateState::to_flat) });
            if let Some(n) = &c.note {
                r = r.note(n.clone());
            }
            out.push(r);
        }
        out
    }
}

/// Scans every state of the enumerated space against each claim of the
/// lemma for `v`, and the generator drift against the closed form.
pub fn drift_condition_scan(v: LyapunovFn, cfg: &SystemConfig, cap: usize) -> Result<DriftScanReport> {
    let c = DerivedConstants::from_config(cfg)?;
    let space = enumerate_states(cfg.n, cfg.b, cap)?;
    let side = SideConditions::evaluate(cfg, &c)?;

    let evaluated: Vec<(f64, f64, Option<f64>)> = space
        .states
        .par_iter()
        .map_init(
            || RoutingDistribution::zeros(cfg.b),
            |routing, state| {
                fill_routing(&cfg.policy, state, routing);
                let drift = apply_generator(|s| v.value(s, &c), state, routing, cfg);
                (v.value(state, &c), drift, v.closed_form_drift(state, routing, &c))
            },
        )
        .collect();

    let closed_form_error = (v != LyapunovFn::VD).then(|| {
        evaluated.iter().filter_map(|&(_, d, cf)| cf.map(|cf| (d - cf).abs())).fold(0.0, f64::max)
    });

    let claims = drift_claims(v, &c)
        .into_iter()
        .map(|claim| {
            let applicable = side.applies(&claim);
            let mut premise_states = 0;
            let mut violations = 0;
            let mut worst_slack = f64::INFINITY;
            let mut worst_state = None;
            for (state, &(value, drift, _)) in space.states.iter().zip(&evaluated) {
                if value < claim.threshold - PREMISE_TOL || !claim.region.contains(state) {
                    continue;
                }
                premise_states += 1;
                let slack = claim.bound - drift;
                if slack < -DRIFT_TOL {
                    violations += 1;
                }
                if slack < worst_slack {
                    worst_slack = slack;
                    worst_state = Some(state.clone());
                }
            }
            let holds = violations == 0;
            let (status, note) = if premise_states == 0 {
                (CheckStatus::Inapplicable, Some("premise unsatisfiable at this N".to_string()))
            } else if !applicable && !holds {
                (CheckStatus::Inapplicable, Some("side conditions of the proof do not hold at this N".to_string()))
            } else {
                (CheckStatus::hard(holds), None)
            };
            ClaimReport { claim, applicable, premise_states, holds, worst_slack, worst_state, violations, status, note }
        })
        .collect();

    Ok(DriftScanReport { lyapunov: v, states_scanned: space.len(), closed_form_error, side_conditions: side, claims })
}

/// Parameters of the conditioned tail bound for one Lyapunov function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub lyapunov: LyapunovFn,
    pub threshold: f64,
    pub region: Region,
    /// `-max drift` over `V >= B` inside the region; infinite if that set is empty.
    pub gamma: f64,
    /// `max(0, max drift)` over `V >= B` outside the region.
    pub delta: f64,
    pub nu_max: f64,
    pub q_max: f64,
    /// The worst-case values `1/N` and `mu_max N`, for comparison.
    pub nu_max_worst_case: f64,
    pub q_max_worst_case: f64,
}

impl DriftSpec {
    pub fn alpha(&self) -> f64 {
        let qn = self.q_max * self.nu_max;
        if self.gamma.is_infinite() || qn == 0.0 {
            0.0
        } else {
            qn / (qn + self.gamma)
        }
    }

    pub fn beta(&self) -> f64 {
        if self.gamma.is_infinite() {
            1.0
        } else {
            self.delta / self.gamma + 1.0
        }
    }

    pub fn valid(&self) -> bool {
        self.gamma > 0.0
    }
}

/// `alpha` and `beta` from the lemma for given rates.
pub fn tail_constants(q_max: f64, nu_max: f64, gamma: f64, delta: f64) -> (f64, f64) {
    (q_max * nu_max / (q_max * nu_max + gamma), delta / gamma + 1.0)
}

/// Builds the spec for `v` from the reachable class of the exact chain.
pub fn calibrate_spec(sol: &ExactSolution, v: LyapunovFn) -> Result<DriftSpec> {
    let c = DerivedConstants::from_config(&sol.cfg)?;
    calibrate_spec_with(sol, v, lemma_threshold_and_region(v, &c))
}

pub fn calibrate_spec_with(sol: &ExactSolution, v: LyapunovFn, (threshold, region): (f64, Region)) -> Result<DriftSpec> {
    let c = DerivedConstants::from_config(&sol.cfg)?;
    let gen = &sol.generator;
    let values: Vec<f64> = sol.space.states.iter().map(|s| v.value(s, &c)).collect();
    let reach = gen.reachable();
    let (mut max_in, mut max_out) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let (mut nu_max, mut q_max) = (0.0f64, 0.0f64);
    for (i, state) in sol.space.states.iter().enumerate() {
        if !reach[i] {
            continue;
        }
        let mut drift = 0.0;
        let mut up = 0.0;
        for &(j, rate) in &gen.rows[i] {
            let dv = values[j] - values[i];
            drift += rate * dv;
            nu_max = nu_max.max(dv.abs());
            if dv > 0.0 {
                up += rate;
            }
        }
        q_max = q_max.max(up);
        if values[i] >= threshold - PREMISE_TOL {
            if region.contains(state) {
                max_in = max_in.max(drift);
            } else {
                max_out = max_out.max(drift);
            }
        }
    }
    let n = sol.cfg.n as f64;
    Ok(DriftSpec {
        lyapunov: v,
        threshold,
        region,
        gamma: if max_in == f64::NEG_INFINITY { f64::INFINITY } else { -max_in },
        delta: max_out.max(0.0),
        nu_max,
        q_max,
        nu_max_worst_case: 1.0 / n,
        q_max_worst_case: c.mu_max * n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub j: usize,
    pub level: f64,
    pub probability: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub spec: DriftSpec,
    pub alpha: f64,
    pub beta: f64,
    pub p_outside: f64,
    pub rows: Vec<TailRow>,
    pub holds: bool,
    pub worst_slack: f64,
    pub status: CheckStatus,
}

impl TailReport {
    pub fn record(&self, instance: &serde_json::Value) -> CheckRecord {
        let r = CheckRecord::new(format!("tail.{}", self.spec.lyapunov), instance.clone(), self.status).slack(self.worst_slack);
        if self.spec.valid() {
            r
        } else {
            r.note(format!("gamma = {} is not positive", self.spec.gamma))
        }
    }
}

/// Compares `P(V >= B + 2 nu_max j)` with `alpha^j + beta P(S not in E)` for
/// `j = 0..=j_max` under the exact distribution.
pub fn tail_bound_verify(sol: &ExactSolution, spec: &DriftSpec, j_max: usize) -> Result<TailReport> {
    if !spec.threshold.is_finite() {
        return Err(Error::InvalidParameter("tail threshold must be finite".into()));
    }
    let c = DerivedConstants::from_config(&sol.cfg)?;
    let (alpha, beta) = (spec.alpha(), spec.beta());
    let weighted: Vec<(f64, f64)> = sol.support().map(|(s, p)| (spec.lyapunov.value(s, &c), p)).collect();
    let p_outside: f64 = sol.support().filter(|(s, _)| !spec.region.contains(s)).map(|(_, p)| p).sum();
    let mut rows = Vec::with_capacity(j_max + 1);
    let mut worst_slack = f64::INFINITY;
    for j in 0..=j_max {
        let level = spec.threshold + 2.0 * spec.nu_max * j as f64;
        let probability: f64 = weighted.iter().filter(|(v, _)| *v >= level - PREMISE_TOL).map(|(_, p)| p).sum();
        let bound = alpha.powi(j as i32) + beta * p_outside;
        worst_slack = worst_slack.min(bound - probability);
        rows.push(TailRow { j, level, probability, bound });
    }
    let holds = worst_slack >= -1e-12;
    let status = if spec.valid() { CheckStatus::hard(holds) } else { CheckStatus::Inapplicable };
    Ok(TailReport { spec: spec.clone(), alpha, beta, p_outside, rows, holds, worst_slack, status })
}
