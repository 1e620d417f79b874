//! Event-driven simulation of the aggregate chain and a per-server
//! cross-check, with batch-means steady-state estimates.

mod microsim;
mod stats;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{for_each_transition, AggregateState, EventKind, Phase, SystemConfig, TransitionEvent};
use crate::policy::{fill_routing, RoutingDistribution};
use crate::stein::{ssc_flags_at, DerivedConstants, SscCoords};

pub use microsim::{per_server_microsim, MICROSIM_MAX_SERVERS};
pub use stats::{batch_estimate, rare_estimate, t_quantile, zero_count_upper, Estimate};

pub const RNG_NAME: &str = "ChaCha8 (rand_chacha 0.9), seed_from_u64(seed), stream = replication index";
pub const MIN_BATCHES: usize = 10;
pub const MIN_ARRIVALS: u64 = 10;
pub const DEFAULT_BATCHES: usize = 32;
pub const DEFAULT_WARMUP_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "InitialRepr", into = "InitialRepr")]
pub enum InitialState {
    Empty,
    /// All busy servers at one job, phase counts at `lambda/mu1` and `p lambda/mu2`.
    NearEquilibrium,
    Counts(AggregateState),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum InitialRepr {
    Name(String),
    Flat(Vec<u32>),
}

impl TryFrom<InitialRepr> for InitialState {
    type Error = Error;

    fn try_from(r: InitialRepr) -> Result<Self> {
        match r {
            InitialRepr::Name(s) => match s.as_str() {
                "empty" => Ok(InitialState::Empty),
                "near_equilibrium" => Ok(InitialState::NearEquilibrium),
                other => Err(Error::Config(format!("unknown initial state {other:?}"))),
            },
            InitialRepr::Flat(v) => Ok(InitialState::Counts(AggregateState::from_flat(&v)?)),
        }
    }
}

impl From<InitialState> for InitialRepr {
    fn from(s: InitialState) -> Self {
        match s {
            InitialState::Empty => InitialRepr::Name("empty".into()),
            InitialState::NearEquilibrium => InitialRepr::Name("near_equilibrium".into()),
            InitialState::Counts(c) => InitialRepr::Flat(c.to_flat()),
        }
    }
}

impl InitialState {
    pub fn build(&self, cfg: &SystemConfig) -> Result<AggregateState> {
        match self {
            InitialState::Empty => Ok(AggregateState::empty(cfg.n, cfg.b)),
            InitialState::NearEquilibrium => {
                let n = cfg.n as f64;
                let c = &cfg.coxian;
                let n11 = ((cfg.lambda / c.mu1 * n).round() as u32).min(cfg.n as u32);
                let n12 = if c.p > 0.0 {
                    ((c.p * cfg.lambda / c.mu2 * n).round() as u32).min(cfg.n as u32 - n11)
                } else {
                    0
                };
                let mut counts = vec![[0u32; 2]; cfg.b];
                counts[0] = [n11, n12];
                AggregateState::from_counts(cfg.n as u32 - n11 - n12, counts)
            }
            InitialState::Counts(s) => {
                s.check(cfg.n, cfg.b)?;
                Ok(s.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    /// Defaults to a fifth of the horizon.
    #[serde(default)]
    pub warmup: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default = "default_initial")]
    pub initial_state: InitialState,
}

fn default_batches() -> usize {
    DEFAULT_BATCHES
}

fn default_initial() -> InitialState {
    InitialState::Empty
}

impl SimConfig {
    pub fn new(horizon: f64, seed: u64) -> Self {
        Self { horizon, warmup: None, seed, stream: 0, batches: DEFAULT_BATCHES, initial_state: InitialState::Empty }
    }

    pub fn with_warmup(mut self, warmup: f64) -> Self {
        self.warmup = Some(warmup);
        self
    }

    pub fn with_batches(mut self, batches: usize) -> Self {
        self.batches = batches;
        self
    }

    pub fn warmup(&self) -> f64 {
        self.warmup.unwrap_or(DEFAULT_WARMUP_FRACTION * self.horizon)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        let w = self.warmup();
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::Config(format!("warmup must be non-negative, got {w}")));
        }
        if w >= self.horizon {
            return Err(Error::Config(format!("warmup {w} must be below the horizon {}", self.horizon)));
        }
        if self.batches < MIN_BATCHES {
            return Err(Error::Config(format!("need at least {MIN_BATCHES} batches, got {}", self.batches)));
        }
        Ok(())
    }

    pub fn batch_length(&self) -> f64 {
        (self.horizon - self.warmup()) / self.batches as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub simulator: String,
    pub n: usize,
    pub b: usize,
    pub lambda: f64,
    pub policy: String,
    pub seed: u64,
    pub stream: u64,
    pub rng: String,
    pub horizon: f64,
    pub warmup: f64,
    pub batches: usize,
    pub events: u64,
    pub arrivals: u64,
    /// Time-averaged `S_{i,m}`, row `i - 1`.
    pub mean_s: Vec<[Estimate; 2]>,
    pub mean_total: Estimate,
    /// Arrival-averaged probability of joining a busy server.
    pub p_wait: Estimate,
    /// Arrival-averaged probability of joining a full server.
    pub p_block: Estimate,
    /// `E[sum S] / (lambda (1 - P(B))) - 1`.
    pub mean_wait: Estimate,
    /// Time-averaged departure rate per server, for the flow balance check.
    pub departure_rate: Estimate,
    /// `None` for unnormalized service parameters.
    pub excess_mean: Option<Estimate>,
    pub p_outside_ssc: Option<Estimate>,
    /// Fractions of post-warmup arrivals that actually joined a busy or full server.
    pub realized_p_wait: f64,
    pub realized_p_block: f64,
    pub insufficient_data: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_clock_seconds: Option<f64>,
}

/// Outcome of one Gillespie step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub dwell: f64,
    pub event: TransitionEvent,
    pub next: AggregateState,
}

/// Every event with positive rate, blocked arrivals included, and its probability.
pub fn event_probabilities(state: &AggregateState, cfg: &SystemConfig) -> Vec<TransitionEvent> {
    let mut routing = RoutingDistribution::zeros(cfg.b);
    fill_routing(&cfg.policy, state, &mut routing);
    let mut events = Vec::new();
    for_each_transition(state, &routing, cfg, |kind, rate| events.push(TransitionEvent { kind, rate }));
    let total: f64 = events.iter().map(|e| e.rate).sum();
    events.iter_mut().for_each(|e| e.rate /= total);
    events
}

/// One step of the chain; `None` when no event has positive rate.
pub fn gillespie_step<R: Rng>(state: &AggregateState, cfg: &SystemConfig, rng: &mut R) -> Option<StepOutcome> {
    let mut stepper = Stepper::new(cfg);
    stepper.prepare(state, cfg);
    let (dwell, event) = stepper.draw(rng)?;
    Some(StepOutcome { dwell, event, next: state.apply(&event.kind) })
}

/// Reusable buffers so that a step allocates nothing.
struct Stepper {
    routing: RoutingDistribution,
    events: Vec<(EventKind, f64)>,
    total: f64,
}

impl Stepper {
    fn new(cfg: &SystemConfig) -> Self {
        Self { routing: RoutingDistribution::zeros(cfg.b), events: Vec::with_capacity(5 * cfg.b + 2), total: 0.0 }
    }

    fn prepare(&mut self, state: &AggregateState, cfg: &SystemConfig) {
        fill_routing(&cfg.policy, state, &mut self.routing);
        self.events.clear();
        let events = &mut self.events;
        for_each_transition(state, &self.routing, cfg, |kind, rate| events.push((kind, rate)));
        self.total = self.events.iter().map(|e| e.1).sum();
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Option<(f64, TransitionEvent)> {
        if self.total <= 0.0 {
            return None;
        }
        let e: f64 = rng.sample(Exp1);
        let dwell = e / self.total;
        let mut u = rng.random::<f64>() * self.total;
        let mut chosen = *self.events.last().expect("positive total rate");
        for &ev in &self.events {
            if u < ev.1 {
                chosen = ev;
                break;
            }
            u -= ev.1;
        }
        Some((dwell, TransitionEvent { kind: chosen.0, rate: chosen.1 }))
    }
}

/// Per-batch integrals and arrival sums.
#[derive(Debug, Clone)]
struct Batch {
    time: f64,
    counts: Vec<f64>,
    total: f64,
    excess: f64,
    outside: f64,
    departure: f64,
    arrivals: u64,
    a1: f64,
    a_b: f64,
    joined_busy: u64,
    blocked: u64,
}

impl Batch {
    fn new(slots: usize) -> Self {
        Self {
            time: 0.0,
            counts: vec![0.0; slots],
            total: 0.0,
            excess: 0.0,
            outside: 0.0,
            departure: 0.0,
            arrivals: 0,
            a1: 0.0,
            a_b: 0.0,
            joined_busy: 0,
            blocked: 0,
        }
    }

    fn absorb(&mut self, other: &Batch) {
        self.time += other.time;
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        self.total += other.total;
        self.excess += other.excess;
        self.outside += other.outside;
        self.departure += other.departure;
        self.arrivals += other.arrivals;
        self.a1 += other.a1;
        self.a_b += other.a_b;
        self.joined_busy += other.joined_busy;
        self.blocked += other.blocked;
    }
}

/// Quantities of the current state that are integrated over time.
#[derive(Debug, Clone)]
struct Snapshot {
    flat: Vec<f64>,
    total: f64,
    excess: f64,
    outside: f64,
    departure: f64,
}

/// Batch-means bookkeeping shared by both simulators.
pub(crate) struct Recorder {
    n: usize,
    b: usize,
    lambda: f64,
    warmup: f64,
    horizon: f64,
    batch_len: f64,
    batches: Vec<Batch>,
    consts: Option<DerivedConstants>,
    snap: Snapshot,
    mu1: f64,
    mu2: f64,
    p: f64,
}

impl Recorder {
    pub(crate) fn new(cfg: &SystemConfig, sim: &SimConfig, state: &AggregateState) -> Self {
        let slots = 2 * cfg.b + 1;
        let mut r = Self {
            n: cfg.n,
            b: cfg.b,
            lambda: cfg.lambda,
            warmup: sim.warmup(),
            horizon: sim.horizon,
            batch_len: sim.batch_length(),
            batches: vec![Batch::new(slots); sim.batches],
            consts: DerivedConstants::from_config(cfg).ok(),
            snap: Snapshot { flat: vec![0.0; slots], total: 0.0, excess: 0.0, outside: 0.0, departure: 0.0 },
            mu1: cfg.coxian.mu1,
            mu2: cfg.coxian.mu2,
            p: cfg.coxian.p,
        };
        r.observe(state);
        r
    }

    /// Refreshes the snapshot after the state changed. O(b).
    pub(crate) fn observe(&mut self, state: &AggregateState) {
        let n = self.n as f64;
        self.snap.flat[0] = state.n_idle() as f64;
        let (mut jobs, mut busy1, mut busy2, mut tail) = (0u64, 0u64, 0u64, 0u64);
        for j in 1..=self.b {
            let c1 = state.count(j, Phase::First);
            let c2 = state.count(j, Phase::Second);
            self.snap.flat[2 * j - 1] = c1 as f64;
            self.snap.flat[2 * j] = c2 as f64;
            jobs += j as u64 * (c1 + c2) as u64;
            busy1 += c1 as u64;
            busy2 += c2 as u64;
            tail += (j as u64 - 1) * (c1 + c2) as u64;
        }
        self.snap.total = jobs as f64 / n;
        self.snap.departure = ((1.0 - self.p) * self.mu1 * busy1 as f64 + self.mu2 * busy2 as f64) / n;
        if let Some(c) = &self.consts {
            let coords = SscCoords { s11: busy1 as f64 / n, s12: busy2 as f64 / n, tail: tail as f64 / n };
            self.snap.excess = c.excess(self.snap.total);
            self.snap.outside = if ssc_flags_at(coords, c).in_ssc() { 0.0 } else { 1.0 };
        }
    }

    fn batch_index(&self, t: f64) -> usize {
        (((t - self.warmup) / self.batch_len) as usize).min(self.batches.len() - 1)
    }

    /// Integrates the current snapshot over `[t0, t1)`.
    pub(crate) fn hold(&mut self, t0: f64, t1: f64) {
        let mut a = t0.max(self.warmup);
        let end = t1.min(self.horizon);
        while a < end {
            let k = self.batch_index(a);
            let boundary = if k + 1 == self.batches.len() { end } else { self.warmup + (k + 1) as f64 * self.batch_len };
            let bnd = boundary.min(end).max(a);
            let dt = bnd - a;
            let s = &self.snap;
            let batch = &mut self.batches[k];
            batch.time += dt;
            batch.counts.iter_mut().zip(&s.flat).for_each(|(acc, v)| *acc += v * dt);
            batch.total += s.total * dt;
            batch.excess += s.excess * dt;
            batch.outside += s.outside * dt;
            batch.departure += s.departure * dt;
            if bnd <= a {
                break;
            }
            a = bnd;
        }
    }

    /// Records an arrival at time `t` seen with busy and full routing weights.
    pub(crate) fn arrival(&mut self, t: f64, a1: f64, a_b: f64, joined_busy: bool, blocked: bool) {
        if t < self.warmup || t >= self.horizon {
            return;
        }
        let k = self.batch_index(t);
        let batch = &mut self.batches[k];
        batch.arrivals += 1;
        batch.a1 += a1;
        batch.a_b += a_b;
        batch.joined_busy += joined_busy as u64;
        batch.blocked += blocked as u64;
    }

    pub(crate) fn finish(self, simulator: &str, cfg: &SystemConfig, sim: &SimConfig, events: u64) -> SimReport {
        let slots = 2 * self.b + 1;
        let mut pooled = Batch::new(slots);
        self.batches.iter().for_each(|b| pooled.absorb(b));
        let n = self.n as f64;
        let b = self.b;
        let lambda = self.lambda;

        let per_batch = |f: &dyn Fn(&Batch) -> f64| -> (f64, Vec<f64>) { (f(&pooled), self.batches.iter().map(f).collect()) };
        let est = |f: &dyn Fn(&Batch) -> f64| {
            let (p, v) = per_batch(f);
            batch_estimate(p, &v)
        };
        let rare = |f: &dyn Fn(&Batch) -> f64| {
            let (p, v) = per_batch(f);
            rare_estimate(p, &v)
        };
        // S_{i,m} is the suffix sum of time-averaged class counts.
        let suffix = |x: &Batch, i: usize, m: usize| -> f64 {
            (i..=b).map(|j| x.counts[2 * j - 1 + m]).sum::<f64>() / (n * x.time)
        };
        let mean_s = (1..=b).map(|i| [est(&|x| suffix(x, i, 0)), est(&|x| suffix(x, i, 1))]).collect();
        let ratio = |num: f64, den: u64| if den == 0 { f64::NAN } else { num / den as f64 };
        let p_block_of = |x: &Batch| ratio(x.a_b, x.arrivals);
        let wait_of = |x: &Batch| x.total / x.time / (lambda * (1.0 - p_block_of(x))) - 1.0;
        let with_consts = self.consts.is_some();

        SimReport {
            simulator: simulator.into(),
            n: self.n,
            b,
            lambda,
            policy: cfg.policy.to_string(),
            seed: sim.seed,
            stream: sim.stream,
            rng: RNG_NAME.into(),
            horizon: sim.horizon,
            warmup: sim.warmup(),
            batches: sim.batches,
            events,
            arrivals: pooled.arrivals,
            mean_s,
            mean_total: est(&|x| x.total / x.time),
            p_wait: rare(&|x| ratio(x.a1, x.arrivals)),
            p_block: rare(&p_block_of),
            mean_wait: est(&wait_of),
            departure_rate: est(&|x| x.departure / x.time),
            excess_mean: with_consts.then(|| est(&|x| x.excess / x.time)),
            p_outside_ssc: with_consts.then(|| rare(&|x| x.outside / x.time)),
            realized_p_wait: ratio(pooled.joined_busy as f64, pooled.arrivals),
            realized_p_block: ratio(pooled.blocked as f64, pooled.arrivals),
            insufficient_data: pooled.arrivals < MIN_ARRIVALS || self.batches.iter().any(|x| x.arrivals == 0),
            wall_clock_seconds: None,
        }
    }
}

fn seeded_rng(sim: &SimConfig) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    rng.set_stream(sim.stream);
    rng
}

/// Sampling interval and sink for `(t, sum S)` trace points.
pub type Trace<'a> = Option<(f64, &'a mut dyn FnMut(f64, f64))>;

/// Simulates the aggregate chain. `trace` receives `(t, sum S)` every
/// `interval` time units when given.
pub fn run_traced(
    cfg: &SystemConfig,
    sim: &SimConfig,
    mut trace: Trace<'_>,
) -> Result<SimReport> {
    cfg.validate()?;
    sim.validate()?;
    let started = Instant::now();
    let mut rng = seeded_rng(sim);
    let mut state = sim.initial_state.build(cfg)?;
    let mut rec = Recorder::new(cfg, sim, &state);
    let mut stepper = Stepper::new(cfg);
    let mut t = 0.0;
    let mut events = 0u64;
    let mut next_trace = 0.0;

    while t < sim.horizon {
        stepper.prepare(&state, cfg);
        let Some((dwell, event)) = stepper.draw(&mut rng) else {
            rec.hold(t, sim.horizon);
            emit_trace(&mut trace, &mut next_trace, sim.horizon, rec.snap.total);
            break;
        };
        let t_next = t + dwell;
        rec.hold(t, t_next);
        emit_trace(&mut trace, &mut next_trace, t_next.min(sim.horizon), rec.snap.total);
        if t_next >= sim.horizon {
            break;
        }
        t = t_next;
        events += 1;
        if let EventKind::Arrival { level, .. } = event.kind {
            let r = &stepper.routing;
            rec.arrival(t, r.a1(), r.a_b(), level >= 1, level >= cfg.b);
        }
        state.apply_mut(&event.kind);
        rec.observe(&state);
    }
    let mut report = rec.finish("aggregate", cfg, sim, events);
    report.wall_clock_seconds = Some(started.elapsed().as_secs_f64());
    Ok(report)
}

fn emit_trace(trace: &mut Trace<'_>, next: &mut f64, until: f64, value: f64) {
    if let Some((interval, f)) = trace {
        while *next < until {
            f(*next, value);
            *next += *interval;
        }
    }
}

pub fn run(cfg: &SystemConfig, sim: &SimConfig) -> Result<SimReport> {
    run_traced(cfg, sim, None)
}

/// Independent replications on streams `0..count`, returned in stream order.
pub fn run_replications(cfg: &SystemConfig, sim: &SimConfig, count: usize) -> Result<Vec<SimReport>> {
    (0..count as u64)
        .into_par_iter()
        .map(|stream| run(cfg, &SimConfig { stream, ..sim.clone() }))
        .collect()
}

/// Writes the `(time, sum S)` trace as CSV.
pub fn run_with_trace_csv<W: std::io::Write>(
    cfg: &SystemConfig,
    sim: &SimConfig,
    interval: f64,
    out: W,
) -> Result<SimReport> {
    if !(interval.is_finite() && interval > 0.0) {
        return Err(Error::Config(format!("trace interval must be positive, got {interval}")));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "total_per_server"])?;
    let mut err = None;
    let mut sink = |t: f64, x: f64| {
        if err.is_none() {
            if let Err(e) = w.write_record([format!("{t:.16e}"), format!("{x:.16e}")]) {
                err = Some(e);
            }
        }
    };
    let report = run_traced(cfg, sim, Some((interval, &mut sink)))?;
    if let Some(e) = err {
        return Err(e.into());
    }
    w.flush()?;
    Ok(report)
}
