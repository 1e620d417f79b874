//! System parameters, the aggregate CTMC state and its transition structure.
//!
//! The state of an `N`-server system with buffer `b - 1` is the vector of
//! server counts per class `(j, m)`: `j` jobs at the server with the job in
//! service in phase `m`. Fractions `q` and suffix sums `s` are derived views.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyKind, RoutingDistribution};

/// Tolerance used to decide whether Coxian parameters have mean one.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Coxian-2 service: phase 1 at rate `mu1`, then phase 2 at rate `mu2` with
/// probability `p`, otherwise departure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxianParams {
    pub mu1: f64,
    pub mu2: f64,
    pub p: f64,
}

impl CoxianParams {
    pub fn new(mu1: f64, mu2: f64, p: f64) -> Result<Self> {
        let params = Self { mu1, mu2, p };
        params.validate()?;
        Ok(params)
    }

    /// Builds parameters with `mu2` chosen so the mean service time is one.
    /// Requires `mu1 > 1` when `p > 0`.
    pub fn normalized_from(mu1: f64, p: f64) -> Result<Self> {
        if p == 0.0 {
            return Self::new(mu1, 1.0, 0.0);
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
        if !(mu1 > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "mu1 = {mu1} leaves no room for phase 2 at mean one"
            )));
        }
        Self::new(mu1, p / (1.0 - 1.0 / mu1), p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu1.is_finite() && self.mu1 > 0.0) {
            return Err(Error::InvalidParameter(format!("mu1 must be positive, got {}", self.mu1)));
        }
        if !(self.mu2.is_finite() && self.mu2 > 0.0) {
            return Err(Error::InvalidParameter(format!("mu2 must be positive, got {}", self.mu2)));
        }
        if !(0.0..1.0).contains(&self.p) {
            return Err(Error::InvalidParameter(format!("p must lie in [0, 1), got {}", self.p)));
        }
        Ok(())
    }

    pub fn mean_service_time(&self) -> f64 {
        mean_service_time(self)
    }

    pub fn is_normalized(&self) -> bool {
        (self.mean_service_time() - 1.0).abs() <= NORMALIZATION_TOL
    }

    pub fn require_normalized(&self) -> Result<()> {
        if self.is_normalized() {
            Ok(())
        } else {
            Err(Error::Unnormalized { mean: self.mean_service_time() })
        }
    }

    /// Rate at which a phase-`m` job in service completes its phase.
    pub fn phase_rate(&self, phase: Phase) -> f64 {
        match phase {
            Phase::First => self.mu1,
            Phase::Second => self.mu2,
        }
    }
}

pub fn mean_service_time(params: &CoxianParams) -> f64 {
    1.0 / params.mu1 + params.p / params.mu2
}

/// Heavy-traffic scaling `lambda = 1 - beta * N^(-alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeavyTraffic {
    pub alpha: f64,
    pub beta: f64,
}

impl HeavyTraffic {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 0.5) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 0.5), got {alpha}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
        }
        Ok(Self { alpha, beta })
    }

    pub fn lambda(&self, n: usize) -> f64 {
        1.0 - self.beta * (n as f64).powf(-self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n: usize,
    pub b: usize,
    pub lambda: f64,
    pub coxian: CoxianParams,
    pub policy: PolicyKind,
    pub heavy_traffic: Option<HeavyTraffic>,
}

impl SystemConfig {
    pub fn new(n: usize, b: usize, lambda: f64, coxian: CoxianParams, policy: PolicyKind) -> Result<Self> {
        let cfg = Self { n, b, lambda, coxian, policy, heavy_traffic: None };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load from the heavy-traffic scaling at this `n`.
    pub fn with_heavy_traffic(
        n: usize,
        b: usize,
        heavy_traffic: HeavyTraffic,
        coxian: CoxianParams,
        policy: PolicyKind,
    ) -> Result<Self> {
        let cfg = Self {
            n,
            b,
            lambda: heavy_traffic.lambda(n),
            coxian,
            policy,
            heavy_traffic: Some(heavy_traffic),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("N must be positive".into()));
        }
        if self.b == 0 {
            return Err(Error::InvalidParameter("b must be positive".into()));
        }
        if !(self.lambda.is_finite() && (0.0..=1.0).contains(&self.lambda)) {
            return Err(Error::InvalidParameter(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        self.coxian.validate()?;
        self.policy.validate(self.n)?;
        if let Some(ht) = self.heavy_traffic {
            HeavyTraffic::new(ht.alpha, ht.beta)?;
            if (ht.lambda(self.n) - self.lambda).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "lambda = {} disagrees with heavy-traffic value {}",
                    self.lambda,
                    ht.lambda(self.n)
                )));
            }
        }
        Ok(())
    }

    /// Total Poisson arrival rate `lambda * N`.
    pub fn arrival_rate(&self) -> f64 {
        self.lambda * self.n as f64
    }

    /// `log N / sqrt N`, the basic scale of every threshold in the analysis.
    pub fn log_scale(&self) -> f64 {
        let n = self.n as f64;
        n.ln() / n.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    First,
    Second,
}

impl Phase {
    pub const BOTH: [Phase; 2] = [Phase::First, Phase::Second];

    pub fn index(self) -> usize {
        match self {
            Phase::First => 0,
            Phase::Second => 1,
        }
    }
}

/// Server counts per (queue length, in-service phase) class.
///
/// `counts[j - 1][m]` holds the number of servers with `j` jobs whose job in
/// service is in phase `m + 1`, for `j = 1..=b`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "Vec<u32>", try_from = "Vec<u32>")]
pub struct AggregateState {
    n_idle: u32,
    counts: Vec<[u32; 2]>,
}

impl AggregateState {
    pub fn empty(n: usize, b: usize) -> Self {
        Self { n_idle: n as u32, counts: vec![[0, 0]; b] }
    }

    /// Builds a state from `n_idle` and per-level `[phase1, phase2]` counts.
    pub fn from_counts(n_idle: u32, counts: Vec<[u32; 2]>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidState("buffer size b must be positive".into()));
        }
        let state = Self { n_idle, counts };
        if state.n() == 0 {
            return Err(Error::InvalidState("state has no servers".into()));
        }
        Ok(state)
    }

    /// Inverse of [`AggregateState::to_flat`].
    pub fn from_flat(flat: &[u32]) -> Result<Self> {
        if flat.len() < 3 || flat.len().is_multiple_of(2) {
            return Err(Error::InvalidState(format!(
                "flat state vector must have odd length 2b + 1 >= 3, got {}",
                flat.len()
            )));
        }
        let counts = flat[1..].chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        Self::from_counts(flat[0], counts)
    }

    /// `[n_idle, n[1][1], n[1][2], ..., n[b][1], n[b][2]]`.
    pub fn to_flat(&self) -> Vec<u32> {
        let mut flat = Vec::with_capacity(1 + 2 * self.counts.len());
        flat.push(self.n_idle);
        for c in &self.counts {
            flat.extend_from_slice(c);
        }
        flat
    }

    /// Reconstructs counts from fractions `q[j][m]` (rows `j = 1..=b`) on `n` servers.
    pub fn from_q(n: usize, q: &[[f64; 2]]) -> Result<Self> {
        let to_count = |x: f64| -> Result<u32> {
            let c = x * n as f64;
            let r = c.round();
            if (c - r).abs() > 1e-9 || r < 0.0 {
                return Err(Error::InvalidState(format!("fraction {x} is not a multiple of 1/{n}")));
            }
            Ok(r as u32)
        };
        let mut counts = Vec::with_capacity(q.len());
        let mut busy = 0u32;
        for row in q {
            let c = [to_count(row[0])?, to_count(row[1])?];
            busy += c[0] + c[1];
            counts.push(c);
        }
        if busy as usize > n {
            return Err(Error::InvalidState("fractions sum above one".into()));
        }
        Self::from_counts(n as u32 - busy, counts)
    }

    pub fn n(&self) -> usize {
        self.n_idle as usize + self.counts.iter().map(|c| (c[0] + c[1]) as usize).sum::<usize>()
    }

    pub fn b(&self) -> usize {
        self.counts.len()
    }

    pub fn n_idle(&self) -> u32 {
        self.n_idle
    }

    /// Servers in class `(j, m)`; `j = 0` is the idle class (phase 1 only).
    pub fn count(&self, j: usize, phase: Phase) -> u32 {
        match (j, phase) {
            (0, Phase::First) => self.n_idle,
            (0, Phase::Second) => 0,
            _ => self.counts[j - 1][phase.index()],
        }
    }

    /// Servers with exactly `j` jobs.
    pub fn level_count(&self, j: usize) -> u32 {
        if j == 0 {
            self.n_idle
        } else {
            self.counts[j - 1][0] + self.counts[j - 1][1]
        }
    }

    /// Busy servers whose job in service is in `phase`, i.e. `N s_{1,m}`.
    pub fn busy(&self, phase: Phase) -> u32 {
        self.counts.iter().map(|c| c[phase.index()]).sum()
    }

    /// Total jobs in the system, `N * sum_i s_i`.
    pub fn total_jobs(&self) -> u64 {
        self.counts
            .iter()
            .enumerate()
            .map(|(j, c)| (j as u64 + 1) * (c[0] + c[1]) as u64)
            .sum()
    }

    /// Smallest queue length present in the system.
    pub fn min_level(&self) -> usize {
        (0..=self.b()).find(|&j| self.level_count(j) > 0).unwrap_or(0)
    }

    pub fn q(&self, j: usize, phase: Phase) -> f64 {
        self.count(j, phase) as f64 / self.n() as f64
    }

    /// Fraction of servers with at least `i` jobs and phase `m` in service (`i >= 1`).
    pub fn s(&self, i: usize, phase: Phase) -> f64 {
        let k = phase.index();
        let suffix: u32 = self.counts[i - 1..].iter().map(|c| c[k]).sum();
        suffix as f64 / self.n() as f64
    }

    /// Fraction of servers with at least `i` jobs.
    pub fn s_level(&self, i: usize) -> f64 {
        let suffix: u32 = self.counts[i - 1..].iter().map(|c| c[0] + c[1]).sum();
        suffix as f64 / self.n() as f64
    }

    /// `sum_{i=1}^b s_i`, the normalized number of jobs.
    pub fn total_per_server(&self) -> f64 {
        self.total_jobs() as f64 / self.n() as f64
    }

    /// `sum_{i=2}^b s_i`, the normalized number of waiting jobs.
    pub fn waiting_per_server(&self) -> f64 {
        self.total_per_server() - self.s_level(1)
    }

    /// Applies a transition in place. Blocked arrivals leave the state unchanged.
    pub fn apply_mut(&mut self, kind: &EventKind) {
        let b = self.b();
        match *kind {
            EventKind::Arrival { level, phase } => {
                if level >= b {
                    return;
                }
                if level == 0 {
                    self.n_idle -= 1;
                } else {
                    self.counts[level - 1][phase.index()] -= 1;
                }
                self.counts[level][phase.index()] += 1;
            }
            EventKind::Phase1Departure(i) => {
                self.counts[i - 1][0] -= 1;
                self.add_first_phase(i - 1);
            }
            EventKind::Phase1ToPhase2(i) => {
                self.counts[i - 1][0] -= 1;
                self.counts[i - 1][1] += 1;
            }
            EventKind::Phase2Departure(i) => {
                self.counts[i - 1][1] -= 1;
                self.add_first_phase(i - 1);
            }
        }
    }

    pub fn apply(&self, kind: &EventKind) -> Self {
        let mut next = self.clone();
        next.apply_mut(kind);
        next
    }

    fn add_first_phase(&mut self, level: usize) {
        if level == 0 {
            self.n_idle += 1;
        } else {
            self.counts[level - 1][0] += 1;
        }
    }

    /// Checks membership constraints: monotone suffix columns and
    /// `s_{1,1} + s_{1,2} <= 1` hold by construction of counts; this checks
    /// the count total against `n`.
    pub fn check(&self, n: usize, b: usize) -> Result<()> {
        if self.b() != b {
            return Err(Error::InvalidState(format!("state has b = {}, expected {b}", self.b())));
        }
        if self.n() != n {
            return Err(Error::InvalidState(format!("state has {} servers, expected {n}", self.n())));
        }
        Ok(())
    }
}

impl From<AggregateState> for Vec<u32> {
    fn from(state: AggregateState) -> Self {
        state.to_flat()
    }
}

impl TryFrom<Vec<u32>> for AggregateState {
    type Error = Error;

    fn try_from(flat: Vec<u32>) -> Result<Self> {
        Self::from_flat(&flat)
    }
}

/// The `b x 2` matrix of suffix sums `s_{i,m}` (row `i - 1`).
pub fn q_to_s(state: &AggregateState) -> Vec<[f64; 2]> {
    (1..=state.b())
        .map(|i| [state.s(i, Phase::First), state.s(i, Phase::Second)])
        .collect()
}

/// Recovers counts from suffix sums on `n` servers.
pub fn s_to_q(n: usize, s: &[[f64; 2]]) -> Result<AggregateState> {
    let b = s.len();
    let mut q = vec![[0.0; 2]; b];
    for i in 0..b {
        for m in 0..2 {
            let next = if i + 1 < b { s[i + 1][m] } else { 0.0 };
            q[i][m] = s[i][m] - next;
        }
    }
    AggregateState::from_q(n, &q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    /// Arrival routed to a server in class `(level, phase)`; `level == b` is blocked.
    Arrival { level: usize, phase: Phase },
    Phase1Departure(usize),
    Phase1ToPhase2(usize),
    Phase2Departure(usize),
}

impl EventKind {
    pub fn is_blocked_arrival(&self, b: usize) -> bool {
        matches!(*self, EventKind::Arrival { level, .. } if level >= b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionEvent {
    pub kind: EventKind,
    pub rate: f64,
}

/// Calls `visit` for every event with positive rate, without validating routing.
pub fn for_each_transition<F>(state: &AggregateState, routing: &RoutingDistribution, cfg: &SystemConfig, mut visit: F)
where
    F: FnMut(EventKind, f64),
{
    let arrival = cfg.arrival_rate();
    let CoxianParams { mu1, mu2, p } = cfg.coxian;
    for j in 0..=state.b() {
        for phase in Phase::BOTH {
            let r = routing.r(j, phase);
            if r > 0.0 && arrival > 0.0 {
                visit(EventKind::Arrival { level: j, phase }, arrival * r);
            }
        }
    }
    for i in 1..=state.b() {
        let n1 = state.count(i, Phase::First) as f64;
        let n2 = state.count(i, Phase::Second) as f64;
        if n1 > 0.0 {
            if p < 1.0 {
                visit(EventKind::Phase1Departure(i), (1.0 - p) * mu1 * n1);
            }
            if p > 0.0 {
                visit(EventKind::Phase1ToPhase2(i), p * mu1 * n1);
            }
        }
        if n2 > 0.0 {
            visit(EventKind::Phase2Departure(i), mu2 * n2);
        }
    }
}

/// All events enabled in `state` with their rates.
pub fn enabled_transitions(
    state: &AggregateState,
    routing: &RoutingDistribution,
    cfg: &SystemConfig,
) -> Result<Vec<TransitionEvent>> {
    routing.check_consistent(state)?;
    let mut events = Vec::with_capacity(2 * state.b() + 4);
    for_each_transition(state, routing, cfg, |kind, rate| events.push(TransitionEvent { kind, rate }));
    Ok(events)
}

/// `Gf(s) = sum over events of rate * (f(next) - f(s))`.
pub fn apply_generator<F>(f: F, state: &AggregateState, routing: &RoutingDistribution, cfg: &SystemConfig) -> f64
where
    F: Fn(&AggregateState) -> f64,
{
    let here = f(state);
    let b = state.b();
    let mut total = 0.0;
    for_each_transition(state, routing, cfg, |kind, rate| {
        if !kind.is_blocked_arrival(b) {
            total += rate * (f(&state.apply(&kind)) - here);
        }
    });
    total
}

/// Per-server departure rate `(1 - p) mu1 s_{1,1} + mu2 s_{1,2}`.
pub fn total_departure_rate(state: &AggregateState, coxian: &CoxianParams) -> f64 {
    (1.0 - coxian.p) * coxian.mu1 * state.s(1, Phase::First) + coxian.mu2 * state.s(1, Phase::Second)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::routing_distribution;

    fn table1_state() -> AggregateState {
        AggregateState::from_q(
            10,
            &[[0.2, 0.1], [0.2, 0.1], [0.1, 0.1], [0.0, 0.0], [0.0, 0.2]],
        )
        .unwrap()
    }

    #[test]
    fn mean_service_time_examples() {
        assert_eq!(CoxianParams::new(2.0, 1.0, 0.5).unwrap().mean_service_time(), 1.0);
        assert_eq!(CoxianParams::new(1.0, 7.5, 0.0).unwrap().mean_service_time(), 1.0);
        assert_eq!(CoxianParams::new(4.0, 1.2, 0.9).unwrap().mean_service_time(), 1.0);
        assert!(CoxianParams::new(4.0, 1.2, 0.9).unwrap().is_normalized());
        assert!(!CoxianParams::new(1.0, 1.0, 0.5).unwrap().is_normalized());
    }

    #[test]
    fn rejects_bad_coxian() {
        assert!(CoxianParams::new(0.0, 1.0, 0.5).is_err());
        assert!(CoxianParams::new(1.0, -1.0, 0.5).is_err());
        assert!(CoxianParams::new(1.0, 1.0, 1.0).is_err());
        assert!(CoxianParams::new(1.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn normalized_from_gives_mean_one() {
        let c = CoxianParams::normalized_from(3.0, 0.4).unwrap();
        assert!(c.is_normalized());
    }

    #[test]
    fn heavy_traffic_lambda() {
        let ht = HeavyTraffic::new(0.3, 1.0).unwrap();
        let cfg = SystemConfig::with_heavy_traffic(
            1000,
            4,
            ht,
            CoxianParams::new(2.0, 1.0, 0.5).unwrap(),
            PolicyKind::Jsq,
        )
        .unwrap();
        assert!((cfg.lambda - (1.0 - 1000f64.powf(-0.3))).abs() <= 1e-12);
        assert!(HeavyTraffic::new(0.5, 1.0).is_err());
    }

    #[test]
    fn table1_suffix_sums() {
        let s = q_to_s(&table1_state());
        assert_eq!(s[0], [0.5, 0.5]);
        assert_eq!(s[1], [0.3, 0.4]);
        assert_eq!(s[2], [0.1, 0.3]);
        assert_eq!(s[3][1], 0.2);
        assert_eq!(s[4][1], 0.2);
    }

    #[test]
    fn empty_state_suffix_sums_are_zero() {
        let s = q_to_s(&AggregateState::empty(7, 3));
        assert!(s.iter().all(|row| row[0] == 0.0 && row[1] == 0.0));
    }

    #[test]
    fn single_level_suffix_sums() {
        let state = AggregateState::from_counts(0, vec![[4, 6], [0, 0]]).unwrap();
        let s = q_to_s(&state);
        assert_eq!(s[0], [0.4, 0.6]);
        assert_eq!(s[1], [0.0, 0.0]);
    }

    #[test]
    fn flat_round_trip_and_errors() {
        let state = table1_state();
        let flat = state.to_flat();
        assert_eq!(flat, vec![0, 2, 1, 2, 1, 1, 1, 0, 0, 0, 2]);
        assert_eq!(AggregateState::from_flat(&flat).unwrap(), state);
        assert!(AggregateState::from_flat(&[1, 2]).is_err());
        let json = serde_json::to_string(&state).unwrap();
        assert_eq!(json, "[0,2,1,2,1,1,1,0,0,0,2]");
        let back: AggregateState = serde_json::from_str(&json).unwrap();
        assert_eq!(back, state);
    }

    #[test]
    fn event_deltas() {
        let mut s = AggregateState::empty(2, 2);
        s.apply_mut(&EventKind::Arrival { level: 0, phase: Phase::First });
        assert_eq!(s.to_flat(), vec![1, 1, 0, 0, 0]);
        s.apply_mut(&EventKind::Phase1ToPhase2(1));
        assert_eq!(s.to_flat(), vec![1, 0, 1, 0, 0]);
        s.apply_mut(&EventKind::Arrival { level: 1, phase: Phase::Second });
        assert_eq!(s.to_flat(), vec![1, 0, 0, 0, 1]);
        // blocked: level == b
        s.apply_mut(&EventKind::Arrival { level: 2, phase: Phase::Second });
        assert_eq!(s.to_flat(), vec![1, 0, 0, 0, 1]);
        s.apply_mut(&EventKind::Phase2Departure(2));
        assert_eq!(s.to_flat(), vec![1, 1, 0, 0, 0]);
        s.apply_mut(&EventKind::Phase1Departure(1));
        assert_eq!(s.to_flat(), vec![2, 0, 0, 0, 0]);
    }

    fn cfg(n: usize, b: usize, lambda: f64, policy: PolicyKind) -> SystemConfig {
        SystemConfig::new(n, b, lambda, CoxianParams::new(2.0, 1.0, 0.5).unwrap(), policy).unwrap()
    }

    #[test]
    fn empty_state_only_arrivals() {
        let c = cfg(5, 2, 0.7, PolicyKind::Jiq);
        let state = AggregateState::empty(5, 2);
        let routing = routing_distribution(&c.policy, &state).unwrap();
        let events = enabled_transitions(&state, &routing, &c).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, EventKind::Arrival { level: 0, phase: Phase::First });
        assert!((events[0].rate - 3.5).abs() < 1e-12);
    }

    #[test]
    fn single_busy_server_events() {
        let c = cfg(1, 1, 0.5, PolicyKind::Jsq);
        let state = AggregateState::from_counts(0, vec![[1, 0]]).unwrap();
        let routing = routing_distribution(&c.policy, &state).unwrap();
        let events = enabled_transitions(&state, &routing, &c).unwrap();
        let rate_of = |k: EventKind| events.iter().find(|e| e.kind == k).map(|e| e.rate).unwrap();
        assert_eq!(events.len(), 3);
        assert!((rate_of(EventKind::Arrival { level: 1, phase: Phase::First }) - 0.5).abs() < 1e-15);
        assert!((rate_of(EventKind::Phase1Departure(1)) - 1.0).abs() < 1e-15);
        assert!((rate_of(EventKind::Phase1ToPhase2(1)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn table1_jsq_arrivals_split_by_phase() {
        let c = cfg(10, 5, 0.9, PolicyKind::Jsq);
        let state = table1_state();
        let routing = routing_distribution(&c.policy, &state).unwrap();
        let events = enabled_transitions(&state, &routing, &c).unwrap();
        let arrivals: Vec<_> = events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Arrival { .. }))
            .collect();
        assert_eq!(arrivals.len(), 2);
        let total = c.arrival_rate();
        for e in arrivals {
            match e.kind {
                EventKind::Arrival { level: 1, phase: Phase::First } => {
                    assert!((e.rate / total - 2.0 / 3.0).abs() < 1e-12)
                }
                EventKind::Arrival { level: 1, phase: Phase::Second } => {
                    assert!((e.rate / total - 1.0 / 3.0).abs() < 1e-12)
                }
                other => panic!("unexpected arrival {other:?}"),
            }
        }
    }

    #[test]
    fn inconsistent_routing_is_rejected() {
        let c = cfg(3, 2, 0.5, PolicyKind::Jsq);
        let state = AggregateState::empty(3, 2);
        let mut routing = RoutingDistribution::zeros(2);
        routing.set(1, Phase::First, 1.0);
        assert!(enabled_transitions(&state, &routing, &c).is_err());
    }

    #[test]
    fn generator_examples() {
        let c = cfg(10, 5, 0.9, PolicyKind::Jiq);
        let state = table1_state();
        let routing = routing_distribution(&c.policy, &state).unwrap();
        assert_eq!(apply_generator(|_| 3.0, &state, &routing, &c), 0.0);

        let g = apply_generator(|s| s.s(1, Phase::Second), &state, &routing, &c);
        let expect = 0.5 * 2.0 * state.s(1, Phase::First) - 1.0 * state.s(1, Phase::Second);
        assert!((g - expect).abs() < 1e-12);

        let g = apply_generator(|s| s.total_per_server(), &state, &routing, &c);
        let expect = c.lambda * (1.0 - routing.a_b()) - total_departure_rate(&state, &c.coxian);
        assert!((g - expect).abs() < 1e-12);
    }

    #[test]
    fn departure_rate_examples() {
        let cox = CoxianParams::new(2.0, 1.0, 0.5).unwrap();
        assert_eq!(total_departure_rate(&AggregateState::empty(4, 2), &cox), 0.0);
        let state = AggregateState::from_counts(1, vec![[2, 1]]).unwrap();
        assert!((total_departure_rate(&state, &cox) - 0.75).abs() < 1e-15);
        let all_phase2 = AggregateState::from_counts(0, vec![[0, 3], [0, 0]]).unwrap();
        assert!((total_departure_rate(&all_phase2, &cox) - cox.mu2).abs() < 1e-15);
    }
}
