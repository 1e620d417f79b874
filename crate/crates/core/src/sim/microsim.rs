//! Per-server simulation with realized routing decisions. Shares nothing
//! with the aggregate dynamics except the state bookkeeping, so it serves as
//! an independent check of the aggregate chain.

use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::Exp1;

use super::{seeded_rng, Recorder, SimConfig, SimReport};
use crate::error::{Error, Result};
use crate::model::{AggregateState, EventKind, Phase, SystemConfig};
use crate::policy::{PodSampling, PolicyKind};

pub const MICROSIM_MAX_SERVERS: usize = 256;

#[derive(Debug, Clone, Copy)]
struct Server {
    jobs: usize,
    phase: Phase,
}

fn uniform_among<R: Rng>(rng: &mut R, servers: &[Server], pred: impl Fn(&Server) -> bool) -> Option<usize> {
    let hits: Vec<usize> = (0..servers.len()).filter(|&k| pred(&servers[k])).collect();
    (!hits.is_empty()).then(|| hits[rng.random_range(0..hits.len())])
}

fn choose_server<R: Rng>(policy: &PolicyKind, servers: &[Server], rng: &mut R) -> usize {
    let n = servers.len();
    match *policy {
        PolicyKind::Jsq => {
            let min = servers.iter().map(|s| s.jobs).min().unwrap_or(0);
            uniform_among(rng, servers, |s| s.jobs == min).expect("nonempty")
        }
        PolicyKind::Jiq => uniform_among(rng, servers, |s| s.jobs == 0).unwrap_or_else(|| rng.random_range(0..n)),
        PolicyKind::I1f => uniform_among(rng, servers, |s| s.jobs == 0)
            .or_else(|| uniform_among(rng, servers, |s| s.jobs == 1))
            .unwrap_or_else(|| rng.random_range(0..n)),
        PolicyKind::Pod { d, sampling } => {
            let picked: Vec<usize> = match sampling {
                PodSampling::WithoutReplacement => sample(rng, n, d).into_vec(),
                PodSampling::WithReplacement => (0..d).map(|_| rng.random_range(0..n)).collect(),
            };
            let min = picked.iter().map(|&k| servers[k].jobs).min().expect("d >= 1");
            let ties: Vec<usize> = picked.into_iter().filter(|&k| servers[k].jobs == min).collect();
            ties[rng.random_range(0..ties.len())]
        }
    }
}

/// Simulates each server separately; limited to small `N` because every
/// event scans all servers.
pub fn per_server_microsim(cfg: &SystemConfig, sim: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    sim.validate()?;
    if cfg.n > MICROSIM_MAX_SERVERS {
        return Err(Error::TooManyServers { n: cfg.n, cap: MICROSIM_MAX_SERVERS });
    }
    let started = Instant::now();
    let mut rng = seeded_rng(sim);
    let mut agg = sim.initial_state.build(cfg)?;
    let mut servers = servers_of(&agg);
    let mut rec = Recorder::new(cfg, sim, &agg);
    let (mu1, mu2, p) = (cfg.coxian.mu1, cfg.coxian.mu2, cfg.coxian.p);
    let arrival = cfg.arrival_rate();
    let rate_of = |s: &Server| match (s.jobs, s.phase) {
        (0, _) => 0.0,
        (_, Phase::First) => mu1,
        (_, Phase::Second) => mu2,
    };

    let mut t = 0.0;
    let mut events = 0u64;
    while t < sim.horizon {
        let service: f64 = servers.iter().map(rate_of).sum();
        let total = arrival + service;
        if total <= 0.0 {
            rec.hold(t, sim.horizon);
            break;
        }
        let e: f64 = rng.sample(Exp1);
        let t_next = t + e / total;
        rec.hold(t, t_next);
        if t_next >= sim.horizon {
            break;
        }
        t = t_next;
        events += 1;

        let mut u = rng.random::<f64>() * total;
        let kind = if u < arrival {
            let k = choose_server(&cfg.policy, &servers, &mut rng);
            let s = &mut servers[k];
            let kind = EventKind::Arrival { level: s.jobs, phase: if s.jobs == 0 { Phase::First } else { s.phase } };
            rec.arrival(t, f64::from(s.jobs >= 1), f64::from(s.jobs >= cfg.b), s.jobs >= 1, s.jobs >= cfg.b);
            if s.jobs < cfg.b {
                if s.jobs == 0 {
                    s.phase = Phase::First;
                }
                s.jobs += 1;
            }
            kind
        } else {
            u -= arrival;
            let mut k = servers.len() - 1;
            for (idx, s) in servers.iter().enumerate() {
                let r = rate_of(s);
                if u < r {
                    k = idx;
                    break;
                }
                u -= r;
            }
            // Rounding can land on a server with zero rate.
            while rate_of(&servers[k]) == 0.0 {
                k -= 1;
            }
            let s = &mut servers[k];
            let level = s.jobs;
            let kind = match s.phase {
                Phase::First if rng.random::<f64>() < p => {
                    s.phase = Phase::Second;
                    EventKind::Phase1ToPhase2(level)
                }
                Phase::First => EventKind::Phase1Departure(level),
                Phase::Second => EventKind::Phase2Departure(level),
            };
            if !matches!(kind, EventKind::Phase1ToPhase2(_)) {
                s.jobs -= 1;
                s.phase = Phase::First;
            }
            kind
        };
        agg.apply_mut(&kind);
        rec.observe(&agg);
    }
    debug_assert_eq!(servers_of(&agg).iter().map(|s| s.jobs).sum::<usize>(), servers.iter().map(|s| s.jobs).sum::<usize>());
    let mut report = rec.finish("per_server", cfg, sim, events);
    report.wall_clock_seconds = Some(started.elapsed().as_secs_f64());
    Ok(report)
}

fn servers_of(state: &AggregateState) -> Vec<Server> {
    let mut out = vec![Server { jobs: 0, phase: Phase::First }; state.n_idle() as usize];
    for j in 1..=state.b() {
        for phase in Phase::BOTH {
            out.extend(std::iter::repeat_n(Server { jobs: j, phase }, state.count(j, phase) as usize));
        }
    }
    out
}
