//! Exact stationary analysis for small systems: state enumeration, generator
//! assembly, the stationary solve and expectations under it.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{for_each_transition, AggregateState, Phase, SystemConfig};
use crate::policy::{fill_routing, RoutingDistribution};
use crate::stein::{ssc_flags, DerivedConstants};

pub const DEFAULT_STATE_CAP: usize = 2_000_000;
pub const STATE_CAP_ENV: &str = "COXBALANCE_STATE_CAP";

/// Reachable classes up to this size are solved by dense LU.
pub const DENSE_LIMIT: usize = 3_000;
pub const RESIDUAL_TOL: f64 = 1e-10;
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// The cap from `COXBALANCE_STATE_CAP`, or the default.
pub fn state_cap_from_env() -> Result<usize> {
    match std::env::var(STATE_CAP_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{STATE_CAP_ENV}={v} is not a positive integer"))),
        Err(_) => Ok(DEFAULT_STATE_CAP),
    }
}

/// `C(n + 2b, 2b)`: compositions of `n` servers into `2b + 1` classes.
pub fn state_count(n: usize, b: usize) -> u128 {
    let k = 2 * b as u128;
    let total = n as u128 + k;
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.saturating_mul(total - i) / (i + 1);
    }
    c
}

#[derive(Debug, Clone)]
pub struct StateSpace {
    pub n: usize,
    pub b: usize,
    /// Sorted lexicographically by flat count vector.
    pub states: Vec<AggregateState>,
}

impl StateSpace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn lookup(&self, state: &AggregateState) -> Option<usize> {
        self.states.binary_search(state).ok()
    }

    pub fn empty_index(&self) -> usize {
        // n_idle = N is the largest first component.
        self.states.len() - 1
    }
}

pub fn enumerate_states(n: usize, b: usize, cap: usize) -> Result<StateSpace> {
    if n == 0 || b == 0 {
        return Err(Error::InvalidParameter("N and b must be positive".into()));
    }
    let required = state_count(n, b);
    if required > cap as u128 {
        return Err(Error::StateCapExceeded { required, cap: cap as u128 });
    }
    let slots = 2 * b + 1;
    let mut flat = vec![0u32; slots];
    let mut states = Vec::with_capacity(required as usize);
    compositions(n as u32, 0, &mut flat, &mut states);
    debug_assert_eq!(states.len() as u128, required);
    Ok(StateSpace { n, b, states })
}

fn compositions(remaining: u32, slot: usize, flat: &mut [u32], out: &mut Vec<AggregateState>) {
    if slot + 1 == flat.len() {
        flat[slot] = remaining;
        out.push(AggregateState::from_flat(flat).expect("valid composition"));
        return;
    }
    for v in 0..=remaining {
        flat[slot] = v;
        compositions(remaining - v, slot + 1, flat, out);
    }
}

/// Sparse CTMC generator over a [`StateSpace`]; blocked arrivals are omitted.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    /// Off-diagonal `(target, rate)` per row, sorted by target.
    pub rows: Vec<Vec<(usize, f64)>>,
    /// `-(row sum of off-diagonals)`.
    pub diag: Vec<f64>,
    pub empty_index: usize,
}

impl GeneratorMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        if from == to {
            return self.diag[from];
        }
        self.rows[from]
            .binary_search_by_key(&to, |&(t, _)| t)
            .map(|i| self.rows[from][i].1)
            .unwrap_or(0.0)
    }

    /// `max |pi^T G|` over all columns.
    pub fn residual(&self, pi: &[f64]) -> f64 {
        let mut flow: Vec<f64> = pi.iter().zip(&self.diag).map(|(p, d)| p * d).collect();
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, rate) in row {
                flow[j] += pi[i] * rate;
            }
        }
        flow.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// States reachable from the empty state.
    pub fn reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut stack = vec![self.empty_index];
        seen[self.empty_index] = true;
        while let Some(i) = stack.pop() {
            for &(j, _) in &self.rows[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    }
}

pub fn build_generator(space: &StateSpace, cfg: &SystemConfig) -> Result<GeneratorMatrix> {
    cfg.policy.validate(space.n)?;
    if cfg.n != space.n || cfg.b != space.b {
        return Err(Error::InvalidParameter(format!(
            "config (N = {}, b = {}) does not match state space (N = {}, b = {})",
            cfg.n, cfg.b, space.n, space.b
        )));
    }
    let rows: Vec<Vec<(usize, f64)>> = space
        .states
        .par_iter()
        .map_init(
            || RoutingDistribution::zeros(space.b),
            |routing, state| {
                fill_routing(&cfg.policy, state, routing);
                let mut row: Vec<(usize, f64)> = Vec::new();
                for_each_transition(state, routing, cfg, |kind, rate| {
                    if kind.is_blocked_arrival(space.b) {
                        return;
                    }
                    let target = space.lookup(&state.apply(&kind)).expect("transition stays in the space");
                    row.push((target, rate));
                });
                row.sort_by_key(|&(t, _)| t);
                row.dedup_by(|next, kept| {
                    if next.0 == kept.0 {
                        kept.1 += next.1;
                        true
                    } else {
                        false
                    }
                });
                row
            },
        )
        .collect();
    let diag = rows.iter().map(|row| -row.iter().map(|&(_, r)| r).sum::<f64>()).collect();
    Ok(GeneratorMatrix { rows, diag, empty_index: space.empty_index() })
}

/// Probability vector over the full state space (zero off the reachable class).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationaryDistribution {
    pub pi: Vec<f64>,
    pub reachable_states: usize,
    pub total_states: usize,
    pub residual: f64,
    pub method: SolveMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    DenseLu,
    GaussSeidel,
}

impl StationaryDistribution {
    pub fn restricted(&self) -> bool {
        self.reachable_states < self.total_states
    }
}

pub fn stationary_distribution(gen: &GeneratorMatrix) -> Result<StationaryDistribution> {
    let reachable = gen.reachable();
    let index: Vec<usize> = (0..gen.len()).filter(|&i| reachable[i]).collect();
    let mut local = vec![usize::MAX; gen.len()];
    for (k, &i) in index.iter().enumerate() {
        local[i] = k;
    }
    let m = index.len();

    let (mut pi_local, method) = if m == 1 {
        (vec![1.0], SolveMethod::DenseLu)
    } else if m <= DENSE_LIMIT {
        (solve_dense(gen, &index, &local)?, SolveMethod::DenseLu)
    } else {
        (solve_gauss_seidel(gen, &index, &local)?, SolveMethod::GaussSeidel)
    };

    for v in pi_local.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-12 {
                return Err(Error::Solver(format!("negative probability {v}")));
            }
            *v = 0.0;
        }
    }
    let total: f64 = pi_local.iter().sum();
    pi_local.iter_mut().for_each(|v| *v /= total);

    let mut pi = vec![0.0; gen.len()];
    for (k, &i) in index.iter().enumerate() {
        pi[i] = pi_local[k];
    }
    let residual = gen.residual(&pi);
    if residual > RESIDUAL_TOL || (pi.iter().sum::<f64>() - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Solver(format!("residual {residual:e} above {RESIDUAL_TOL:e}")));
    }
    Ok(StationaryDistribution { pi, reachable_states: m, total_states: gen.len(), residual, method })
}

/// Solves `G^T pi = 0` with the last equation replaced by `sum pi = 1`,
/// followed by one step of iterative refinement.
fn solve_dense(gen: &GeneratorMatrix, index: &[usize], local: &[usize]) -> Result<Vec<f64>> {
    let m = index.len();
    let mut a = DMatrix::<f64>::zeros(m, m);
    for (k, &i) in index.iter().enumerate() {
        a[(k, k)] = gen.diag[i];
        for &(j, rate) in &gen.rows[i] {
            a[(local[j], k)] += rate;
        }
    }
    for c in 0..m {
        a[(m - 1, c)] = 1.0;
    }
    let mut rhs = nalgebra::DVector::<f64>::zeros(m);
    rhs[m - 1] = 1.0;
    let lu = a.clone().lu();
    let mut x = lu.solve(&rhs).ok_or_else(|| Error::Solver("singular generator".into()))?;
    let r = &rhs - &a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    Ok(x.iter().copied().collect())
}

fn solve_gauss_seidel(gen: &GeneratorMatrix, index: &[usize], local: &[usize]) -> Result<Vec<f64>> {
    let m = index.len();
    let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for (k, &i) in index.iter().enumerate() {
        for &(j, rate) in &gen.rows[i] {
            incoming[local[j]].push((k, rate));
        }
    }
    let out: Vec<f64> = index.iter().map(|&i| -gen.diag[i]).collect();
    let mut pi = vec![1.0 / m as f64; m];
    let mut full = vec![0.0; gen.len()];
    for sweep in 0..200_000 {
        for j in 0..m {
            let inflow: f64 = incoming[j].iter().map(|&(i, r)| pi[i] * r).sum();
            pi[j] = inflow / out[j];
        }
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|v| *v /= total);
        if sweep % 20 == 19 {
            for (k, &i) in index.iter().enumerate() {
                full[i] = pi[k];
            }
            if gen.residual(&full) <= RESIDUAL_TOL * 0.1 {
                return Ok(pi);
            }
        }
    }
    Err(Error::Solver("Gauss-Seidel did not converge".into()))
}

/// `sum_s pi(s) f(s)`.
pub fn expectation<F>(f: F, pi: &StationaryDistribution, space: &StateSpace) -> f64
where
    F: Fn(&AggregateState) -> f64,
{
    space
        .states
        .iter()
        .zip(&pi.pi)
        .filter(|(_, &p)| p > 0.0)
        .map(|(s, &p)| p * f(s))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactMetrics {
    /// `E[S_{i,m}]`, row `i - 1`.
    pub mean_s: Vec<[f64; 2]>,
    pub mean_total: f64,
    pub p_wait: f64,
    pub p_block: f64,
    /// `None` when no job is accepted.
    pub mean_wait: Option<f64>,
    /// `None` for unnormalized service parameters.
    pub p_outside_ssc: Option<f64>,
    pub excess_mean: Option<f64>,
}

pub fn exact_metrics(pi: &StationaryDistribution, space: &StateSpace, cfg: &SystemConfig) -> ExactMetrics {
    let consts = DerivedConstants::from_config(cfg).ok();
    let mut mean_s = vec![[0.0; 2]; space.b];
    let (mut mean_total, mut p_wait, mut p_block) = (0.0, 0.0, 0.0);
    let (mut outside, mut excess) = (0.0, 0.0);
    let mut routing = RoutingDistribution::zeros(space.b);
    for (state, &p) in space.states.iter().zip(&pi.pi) {
        if p == 0.0 {
            continue;
        }
        for (i, row) in mean_s.iter_mut().enumerate() {
            row[0] += p * state.s(i + 1, Phase::First);
            row[1] += p * state.s(i + 1, Phase::Second);
        }
        let total = state.total_per_server();
        mean_total += p * total;
        fill_routing(&cfg.policy, state, &mut routing);
        p_wait += p * routing.a1();
        p_block += p * routing.a_b();
        if let Some(c) = &consts {
            let flags = ssc_flags(state, c);
            if !(flags.in_ssc1 || flags.in_ssc2) {
                outside += p;
            }
            excess += p * c.excess(total);
        }
    }
    let accepted = cfg.lambda * (1.0 - p_block);
    ExactMetrics {
        mean_s,
        mean_total,
        p_wait,
        p_block,
        mean_wait: (accepted > 0.0).then(|| mean_total / accepted - 1.0),
        p_outside_ssc: consts.map(|_| outside),
        excess_mean: consts.map(|_| excess),
    }
}

/// Everything needed to evaluate expectations for one instance.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub cfg: SystemConfig,
    pub space: StateSpace,
    pub generator: GeneratorMatrix,
    pub pi: StationaryDistribution,
}

impl ExactSolution {
    pub fn solve(cfg: &SystemConfig, cap: usize) -> Result<Self> {
        let space = enumerate_states(cfg.n, cfg.b, cap)?;
        let generator = build_generator(&space, cfg)?;
        let pi = stationary_distribution(&generator)?;
        Ok(Self { cfg: cfg.clone(), space, generator, pi })
    }

    pub fn expectation<F: Fn(&AggregateState) -> f64>(&self, f: F) -> f64 {
        expectation(f, &self.pi, &self.space)
    }

    pub fn metrics(&self) -> ExactMetrics {
        exact_metrics(&self.pi, &self.space, &self.cfg)
    }

    /// Iterates `(state, probability)` over the reachable class.
    pub fn support(&self) -> impl Iterator<Item = (&AggregateState, f64)> {
        self.space.states.iter().zip(self.pi.pi.iter().copied()).filter(|(_, p)| *p > 0.0)
    }

    /// Iterates the reachable states, including any with underflowed probability.
    pub fn reachable_states(&self) -> Vec<&AggregateState> {
        let reach = self.generator.reachable();
        self.space.states.iter().zip(reach).filter(|(_, r)| *r).map(|(s, _)| s).collect()
    }
}

/// Writes one CSV row per state: flat counts followed by the probability.
pub fn write_distribution<W: Write>(out: W, space: &StateSpace, pi: &StationaryDistribution) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["n_idle".to_string()];
    for j in 1..=space.b {
        header.push(format!("n_{j}_1"));
        header.push(format!("n_{j}_2"));
    }
    header.push("probability".into());
    w.write_record(&header)?;
    for (state, p) in space.states.iter().zip(&pi.pi) {
        let mut row: Vec<String> = state.to_flat().iter().map(u32::to_string).collect();
        row.push(format!("{p:.16e}"));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_distribution_file(path: &Path, space: &StateSpace, pi: &StationaryDistribution) -> Result<()> {
    write_distribution(std::fs::File::create(path)?, space, pi)
}
