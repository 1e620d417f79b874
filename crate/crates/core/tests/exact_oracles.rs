//! The exact solver against textbook queues with known stationary laws.

use coxbalance::exact::{enumerate_states, state_count};
use coxbalance::*;

fn exponential() -> CoxianParams {
    CoxianParams::new(1.0, 1.0, 0.0).unwrap()
}

/// Erlang loss formula by the stable recursion.
fn erlang_b(servers: usize, load: f64) -> f64 {
    (1..=servers).fold(1.0, |b, k| load * b / (k as f64 + load * b))
}

#[test]
fn single_server_is_mm1k() {
    for (lambda, b) in [(0.5, 1), (0.7, 3), (0.95, 5), (1.0, 4)] {
        let cfg = SystemConfig::new(1, b, lambda, exponential(), PolicyKind::Jsq).unwrap();
        let sol = ExactSolution::solve(&cfg, 10_000).unwrap();
        let weights: Vec<f64> = (0..=b).map(|k| lambda.powi(k as i32)).collect();
        let z: f64 = weights.iter().sum();
        let mean: f64 = weights.iter().enumerate().map(|(k, w)| k as f64 * w / z).sum();
        let m = sol.metrics();
        assert!((m.mean_total - mean).abs() < 1e-12, "lambda={lambda} b={b}");
        assert!((m.p_block - weights[b] / z).abs() < 1e-12);
        assert!((m.p_wait - (1.0 - weights[0] / z)).abs() < 1e-12);
    }
}

#[test]
fn no_buffer_is_erlang_loss() {
    // With one slot per server, JSQ, JIQ and I1F all join an idle server if any.
    for n in 1..=6 {
        for policy in [PolicyKind::Jsq, PolicyKind::Jiq, PolicyKind::I1f] {
            let cfg = SystemConfig::new(n, 1, 0.8, exponential(), policy).unwrap();
            let m = ExactSolution::solve(&cfg, 10_000).unwrap().metrics();
            let expected = erlang_b(n, 0.8 * n as f64);
            assert!((m.p_block - expected).abs() < 1e-12, "n={n} {policy}: {} vs {expected}", m.p_block);
        }
    }
}

#[test]
fn single_server_coxian_matches_hand_solution() {
    // N = 1, b = 1: idle, busy in phase 1, busy in phase 2.
    let (lambda, mu1, mu2, p) = (0.6, 2.0, 1.0, 0.5);
    let cfg = SystemConfig::new(1, 1, lambda, CoxianParams::new(mu1, mu2, p).unwrap(), PolicyKind::Jsq).unwrap();
    let m = ExactSolution::solve(&cfg, 100).unwrap().metrics();
    // Balance: lambda pi0 = (1-p) mu1 pi1 + mu2 pi2, mu1 pi1 = lambda pi0, mu2 pi2 = p mu1 pi1.
    let (w0, w1, w2) = (1.0, lambda / mu1, p * lambda / mu2);
    let z = w0 + w1 + w2;
    assert!((m.mean_s[0][0] - w1 / z).abs() < 1e-14);
    assert!((m.mean_s[0][1] - w2 / z).abs() < 1e-14);
    assert!((m.p_block - (w1 + w2) / z).abs() < 1e-14);
}

#[test]
fn enumeration_count_matches_formula() {
    for n in 1..=5 {
        for b in 1..=3 {
            let space = enumerate_states(n, b, 1_000_000).unwrap();
            assert_eq!(space.len() as u128, state_count(n, b));
            // Stars and bars: n servers over 2b + 1 classes.
            let classes = 2 * b + 1;
            let binom = (1..classes).fold(1u128, |acc, k| acc * (n + k) as u128 / k as u128);
            assert_eq!(state_count(n, b), binom);
        }
    }
}

#[test]
fn cap_is_enforced() {
    let cfg = SystemConfig::new(50, 5, 0.9, exponential(), PolicyKind::Jsq).unwrap();
    match ExactSolution::solve(&cfg, 2_000_000) {
        Err(Error::StateCapExceeded { required, .. }) => assert_eq!(required, state_count(50, 5)),
        other => panic!("expected cap error, got {other:?}"),
    }
}

#[test]
fn phase_two_unreachable_without_second_phase() {
    let cfg = SystemConfig::new(3, 2, 0.7, CoxianParams::new(1.0, 1.0, 0.0).unwrap(), PolicyKind::pod(2)).unwrap();
    let sol = ExactSolution::solve(&cfg, 10_000).unwrap();
    for (s, p) in sol.space.states.iter().zip(&sol.pi.pi) {
        if s.busy(Phase::Second) > 0 {
            assert_eq!(*p, 0.0);
        }
    }
    assert!(sol.pi.restricted());
}
