//! Dispatching policies and the routing distributions they induce on the
//! aggregate state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{enumerate_states, state_count, DEFAULT_STATE_CAP};
use crate::model::{AggregateState, Phase, SystemConfig};

const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PodSampling {
    #[default]
    WithoutReplacement,
    WithReplacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PolicyKind {
    /// Join the shortest queue.
    Jsq,
    /// Join an idle queue, else a uniformly random server.
    Jiq,
    /// Idle server first, then a server with one job, else uniform.
    I1f,
    /// Sample `d` servers and join the shortest among them.
    Pod {
        d: usize,
        #[serde(default, rename = "pod_sampling")]
        sampling: PodSampling,
    },
}

impl PolicyKind {
    pub fn pod(d: usize) -> Self {
        PolicyKind::Pod { d, sampling: PodSampling::WithoutReplacement }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if let PolicyKind::Pod { d, .. } = *self {
            if d == 0 || d > n {
                return Err(Error::SampleSizeOutOfRange { d, n });
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Jsq => "jsq",
            PolicyKind::Jiq => "jiq",
            PolicyKind::I1f => "i1f",
            PolicyKind::Pod { .. } => "pod",
        }
    }

    pub fn d(&self) -> Option<usize> {
        match *self {
            PolicyKind::Pod { d, .. } => Some(d),
            _ => None,
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            PolicyKind::Pod { d, sampling: PodSampling::WithoutReplacement } => write!(f, "pod(d={d})"),
            PolicyKind::Pod { d, sampling: PodSampling::WithReplacement } => write!(f, "pod(d={d},wr)"),
            other => f.write_str(other.name()),
        }
    }
}

/// Probability that an arrival is routed to a server in class `(j, m)`,
/// `j = 0..=b`. Class `(0, 1)` is the idle class; mass at `j = b` is blocked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDistribution {
    mass: Vec<[f64; 2]>,
}

impl RoutingDistribution {
    pub fn zeros(b: usize) -> Self {
        Self { mass: vec![[0.0; 2]; b + 1] }
    }

    pub fn b(&self) -> usize {
        self.mass.len() - 1
    }

    pub fn r(&self, j: usize, phase: Phase) -> f64 {
        self.mass[j][phase.index()]
    }

    pub fn set(&mut self, j: usize, phase: Phase, value: f64) {
        self.mass[j][phase.index()] = value;
    }

    fn clear(&mut self) {
        self.mass.iter_mut().for_each(|row| *row = [0.0; 2]);
    }

    /// `A_{i,m}(s)`: routed to a server with at least `i` jobs and phase `m`.
    pub fn a(&self, i: usize, phase: Phase) -> f64 {
        self.mass[i..].iter().map(|row| row[phase.index()]).sum()
    }

    /// `A_i(s) = A_{i,1}(s) + A_{i,2}(s)`.
    pub fn a_level(&self, i: usize) -> f64 {
        self.mass[i..].iter().map(|row| row[0] + row[1]).sum()
    }

    /// Probability of routing to a busy server.
    pub fn a1(&self) -> f64 {
        1.0 - self.mass[0][0]
    }

    /// Probability of routing to a full server (the job is blocked).
    pub fn a_b(&self) -> f64 {
        let last = self.mass[self.b()];
        last[0] + last[1]
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().map(|row| row[0] + row[1]).sum()
    }

    /// Mass sums to one and sits only on occupied classes.
    pub fn check_consistent(&self, state: &AggregateState) -> Result<()> {
        if self.b() != state.b() {
            return Err(Error::InconsistentRouting(format!(
                "routing has b = {}, state has b = {}",
                self.b(),
                state.b()
            )));
        }
        let total = self.total_mass();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InconsistentRouting(format!("total mass {total}")));
        }
        for j in 0..=self.b() {
            for phase in Phase::BOTH {
                let r = self.r(j, phase);
                if r < 0.0 {
                    return Err(Error::InconsistentRouting(format!("negative mass at ({j}, {phase:?})")));
                }
                if r > 0.0 && state.count(j, phase) == 0 {
                    return Err(Error::InconsistentRouting(format!("mass {r} on empty class ({j}, {phase:?})")));
                }
            }
        }
        Ok(())
    }
}

pub fn routing_distribution(policy: &PolicyKind, state: &AggregateState) -> Result<RoutingDistribution> {
    policy.validate(state.n())?;
    let mut routing = RoutingDistribution::zeros(state.b());
    fill_routing(policy, state, &mut routing);
    Ok(routing)
}

/// Overwrites `routing` with the policy's distribution at `state`. The policy
/// must already be validated against `state.n()`.
pub fn fill_routing(policy: &PolicyKind, state: &AggregateState, routing: &mut RoutingDistribution) {
    routing.clear();
    match *policy {
        PolicyKind::Jsq => route_to_level(state, state.min_level(), 1.0, routing),
        PolicyKind::Jiq => {
            if state.n_idle() > 0 {
                routing.set(0, Phase::First, 1.0);
            } else {
                route_uniform(state, routing);
            }
        }
        PolicyKind::I1f => {
            if state.n_idle() > 0 {
                routing.set(0, Phase::First, 1.0);
            } else if state.level_count(1) > 0 {
                route_to_level(state, 1, 1.0, routing);
            } else {
                route_uniform(state, routing);
            }
        }
        PolicyKind::Pod { d, sampling } => {
            let n = state.n();
            let mut below = 0usize;
            let mut survive = 1.0;
            for j in 0..=state.b() {
                let at_level = state.level_count(j) as usize;
                below += at_level;
                let survive_next = all_sampled_from(n - below, n, d, sampling);
                let p_min = (survive - survive_next).max(0.0);
                if at_level > 0 && p_min > 0.0 {
                    route_to_level(state, j, p_min, routing);
                }
                survive = survive_next;
            }
        }
    }
}

/// Probability that all `d` sampled servers come from a group of `good` out of `n`.
fn all_sampled_from(good: usize, n: usize, d: usize, sampling: PodSampling) -> f64 {
    match sampling {
        PodSampling::WithReplacement => (good as f64 / n as f64).powi(d as i32),
        PodSampling::WithoutReplacement => {
            if good < d {
                return 0.0;
            }
            (0..d).map(|t| (good - t) as f64 / (n - t) as f64).product()
        }
    }
}

/// Spreads `weight` over level `j`, split by phase in proportion to the counts.
fn route_to_level(state: &AggregateState, j: usize, weight: f64, routing: &mut RoutingDistribution) {
    let total = state.level_count(j) as f64;
    for phase in Phase::BOTH {
        let c = state.count(j, phase);
        if c > 0 {
            routing.set(j, phase, weight * c as f64 / total);
        }
    }
}

fn route_uniform(state: &AggregateState, routing: &mut RoutingDistribution) {
    let n = state.n() as f64;
    for j in 0..=state.b() {
        for phase in Phase::BOTH {
            let c = state.count(j, phase);
            if c > 0 {
                routing.set(j, phase, c as f64 / n);
            }
        }
    }
}

/// Probability that an arrival is routed to a busy server.
pub fn a1(policy: &PolicyKind, state: &AggregateState) -> Result<f64> {
    Ok(routing_distribution(policy, state)?.a1())
}

/// Outcome of checking `A_1(s) <= 1/sqrt(N)` below the heavy-traffic threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiReport {
    pub holds: bool,
    /// `lambda + (1 + mu1 + mu2) / w_l * log N / sqrt N`.
    pub threshold: f64,
    /// Threshold at or above one: the condition then covers every state with an
    /// idle server and the check is restricted to `s_1 < 1`.
    pub vacuous_threshold: bool,
    pub exhaustive: bool,
    pub states_checked: usize,
    pub worst_a1: f64,
    pub witnesses: Vec<AggregateState>,
}

const MAX_WITNESSES: usize = 8;
const SAMPLED_STATES: usize = 10_000;

/// Checks membership in the policy set on every state (when the space is
/// enumerable) or on a seeded random sample of states.
pub fn pi_membership_check(policy: &PolicyKind, cfg: &SystemConfig) -> Result<PiReport> {
    policy.validate(cfg.n)?;
    let c = &cfg.coxian;
    let w_l = ((1.0 - c.p) * c.mu1).min(c.mu2);
    let threshold = cfg.lambda + (1.0 + c.mu1 + c.mu2) / w_l * cfg.log_scale();
    let vacuous = threshold >= 1.0;
    let limit = 1.0 / (cfg.n as f64).sqrt();

    let exhaustive = state_count(cfg.n, cfg.b) <= DEFAULT_STATE_CAP as u128;
    let states: Vec<AggregateState> = if exhaustive {
        enumerate_states(cfg.n, cfg.b, DEFAULT_STATE_CAP)?.states
    } else {
        sample_states(cfg.n, cfg.b, SAMPLED_STATES, 0x5eed)
    };

    let mut report = PiReport {
        holds: true,
        threshold,
        vacuous_threshold: vacuous,
        exhaustive,
        states_checked: 0,
        worst_a1: 0.0,
        witnesses: Vec::new(),
    };
    let mut routing = RoutingDistribution::zeros(cfg.b);
    for state in states {
        let s1 = state.s_level(1);
        if s1 > threshold || (vacuous && state.n_idle() == 0) {
            continue;
        }
        report.states_checked += 1;
        fill_routing(policy, &state, &mut routing);
        let a1 = routing.a1();
        report.worst_a1 = report.worst_a1.max(a1);
        if a1 > limit + MASS_TOL {
            report.holds = false;
            if report.witnesses.len() < MAX_WITNESSES {
                report.witnesses.push(state);
            }
        }
    }
    Ok(report)
}

/// Random states: idle count uniform, busy servers assigned to classes uniformly.
pub fn sample_states(n: usize, b: usize, count: usize, seed: u64) -> Vec<AggregateState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let idle = rng.random_range(0..=n);
            let mut counts = vec![[0u32; 2]; b];
            for _ in 0..n - idle {
                let class = rng.random_range(0..2 * b);
                counts[class / 2][class % 2] += 1;
            }
            AggregateState::from_counts(idle as u32, counts).expect("n > 0")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CoxianParams;

    fn cfg(n: usize, b: usize, lambda: f64, policy: PolicyKind) -> SystemConfig {
        SystemConfig::new(n, b, lambda, CoxianParams::new(2.0, 1.0, 0.5).unwrap(), policy).unwrap()
    }

    #[test]
    fn jsq_with_idle_server_goes_idle() {
        let state = AggregateState::from_counts(1, vec![[2, 1], [0, 3]]).unwrap();
        let r = routing_distribution(&PolicyKind::Jsq, &state).unwrap();
        assert_eq!(r.r(0, Phase::First), 1.0);
        assert_eq!(r.a1(), 0.0);
    }

    #[test]
    fn jsq_table1_phase_split() {
        let state = AggregateState::from_counts(0, vec![[2, 1], [2, 1], [1, 1], [0, 0], [0, 2]]).unwrap();
        let r = routing_distribution(&PolicyKind::Jsq, &state).unwrap();
        assert!((r.r(1, Phase::First) - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.r(1, Phase::Second) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.a1(), 1.0);
    }

    #[test]
    fn pod_two_of_four() {
        let state = AggregateState::from_counts(2, vec![[2, 0]]).unwrap();
        let a1 = a1(&PolicyKind::pod(2), &state).unwrap();
        assert!((a1 - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn pod_rejects_large_d() {
        let state = AggregateState::empty(3, 1);
        assert!(matches!(
            routing_distribution(&PolicyKind::pod(4), &state),
            Err(Error::SampleSizeOutOfRange { d: 4, n: 3 })
        ));
    }

    #[test]
    fn all_busy_means_a1_is_one() {
        let state = AggregateState::from_counts(0, vec![[1, 1], [1, 0]]).unwrap();
        for policy in [PolicyKind::Jsq, PolicyKind::Jiq, PolicyKind::I1f, PolicyKind::pod(2)] {
            assert!((a1(&policy, &state).unwrap() - 1.0).abs() < 1e-15, "{policy}");
        }
    }

    #[test]
    fn jiq_idle_and_uniform_fallback() {
        let with_idle = AggregateState::from_counts(1, vec![[2, 1], [0, 3]]).unwrap();
        assert_eq!(a1(&PolicyKind::Jiq, &with_idle).unwrap(), 0.0);
        let busy = AggregateState::from_counts(0, vec![[2, 1], [2, 1], [1, 1], [0, 0], [0, 2]]).unwrap();
        let r = routing_distribution(&PolicyKind::Jiq, &busy).unwrap();
        assert!((r.a1() - 1.0).abs() < 1e-15);
        assert!((r.r(5, Phase::Second) - 0.2).abs() < 1e-15);
        assert!((r.a_b() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn i1f_prefers_single_job_servers() {
        let state = AggregateState::from_counts(0, vec![[1, 1], [3, 0], [0, 1]]).unwrap();
        let r = routing_distribution(&PolicyKind::I1f, &state).unwrap();
        assert_eq!(r.r(1, Phase::First), 0.5);
        assert_eq!(r.r(1, Phase::Second), 0.5);
        let no_ones = AggregateState::from_counts(0, vec![[0, 0], [3, 0], [0, 1]]).unwrap();
        let r = routing_distribution(&PolicyKind::I1f, &no_ones).unwrap();
        assert_eq!(r.r(2, Phase::First), 0.75);
        assert_eq!(r.r(3, Phase::Second), 0.25);
    }

    #[test]
    fn pi_jsq_holds_small() {
        let report = pi_membership_check(&PolicyKind::Jsq, &cfg(4, 2, 0.7, PolicyKind::Jsq)).unwrap();
        assert!(report.holds);
        assert!(report.vacuous_threshold);
        assert!(report.exhaustive);
    }

    #[test]
    fn pi_i1f_holds_small() {
        let report = pi_membership_check(&PolicyKind::I1f, &cfg(4, 3, 0.7, PolicyKind::I1f)).unwrap();
        assert!(report.holds);
    }

    #[test]
    fn pi_pod1_fails_with_witness() {
        let c = cfg(100, 1, 0.9, PolicyKind::pod(1));
        let report = pi_membership_check(&c.policy, &c).unwrap();
        assert!(!report.holds);
        let w = &report.witnesses[0];
        assert!(w.s_level(1) > 0.1);
        let a1 = a1(&c.policy, w).unwrap();
        assert!((a1 - w.s_level(1)).abs() < 1e-12);
    }

    #[test]
    fn sampled_states_are_valid() {
        for s in sample_states(50, 3, 100, 1) {
            assert_eq!(s.n(), 50);
            assert_eq!(s.b(), 3);
        }
    }
}
