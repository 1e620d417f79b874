use coxbalance::model::{apply_generator, for_each_transition, q_to_s, s_to_q};
use coxbalance::policy::{fill_routing, routing_distribution};
use coxbalance::*;
use proptest::prelude::*;

/// Random state with `n` servers and buffer `b`.
fn state_strategy() -> impl Strategy<Value = AggregateState> {
    (1usize..=12, 1usize..=4).prop_flat_map(|(n, b)| {
        proptest::collection::vec(0usize..=2 * b, n).prop_map(move |classes| {
            // Class 0 is idle; class 2j-1+m is level j, phase m.
            let mut counts = vec![[0u32; 2]; b];
            let mut idle = 0;
            for c in classes {
                if c == 0 {
                    idle += 1;
                } else {
                    counts[(c - 1) / 2][(c - 1) % 2] += 1;
                }
            }
            AggregateState::from_counts(idle, counts).unwrap()
        })
    })
}

fn policy_strategy(n: usize) -> impl Strategy<Value = PolicyKind> {
    prop_oneof![
        Just(PolicyKind::Jsq),
        Just(PolicyKind::Jiq),
        Just(PolicyKind::I1f),
        (1..=n, any::<bool>()).prop_map(|(d, with)| PolicyKind::Pod {
            d,
            sampling: if with { PodSampling::WithReplacement } else { PodSampling::WithoutReplacement },
        }),
    ]
}

fn with_policy() -> impl Strategy<Value = (AggregateState, PolicyKind)> {
    state_strategy().prop_flat_map(|s| {
        let n = s.n();
        (Just(s), policy_strategy(n))
    })
}

fn config(state: &AggregateState, policy: PolicyKind) -> SystemConfig {
    SystemConfig::new(state.n(), state.b(), 0.8, CoxianParams::new(2.0, 1.0, 0.5).unwrap(), policy).unwrap()
}

/// Routing by direct enumeration of every sample of `d` labelled servers.
fn brute_force_pod(state: &AggregateState, d: usize, sampling: PodSampling) -> Vec<[f64; 2]> {
    let mut servers = Vec::new();
    for j in 0..=state.b() {
        for (m, phase) in Phase::BOTH.into_iter().enumerate() {
            let c = if j == 0 { if m == 0 { state.n_idle() } else { 0 } } else { state.count(j, phase) };
            servers.extend(std::iter::repeat_n((j, m), c as usize));
        }
    }
    let n = servers.len();
    let mut out = vec![[0.0; 2]; state.b() + 1];
    let mut samples: Vec<Vec<usize>> = Vec::new();
    match sampling {
        PodSampling::WithReplacement => {
            let total = n.pow(d as u32);
            for mut code in 0..total {
                let mut s = Vec::with_capacity(d);
                for _ in 0..d {
                    s.push(code % n);
                    code /= n;
                }
                samples.push(s);
            }
        }
        PodSampling::WithoutReplacement => {
            fn subsets(start: usize, n: usize, d: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
                if cur.len() == d {
                    out.push(cur.clone());
                    return;
                }
                for k in start..n {
                    cur.push(k);
                    subsets(k + 1, n, d, cur, out);
                    cur.pop();
                }
            }
            subsets(0, n, d, &mut Vec::new(), &mut samples);
        }
    }
    let weight = 1.0 / samples.len() as f64;
    for s in &samples {
        let min = s.iter().map(|&k| servers[k].0).min().unwrap();
        let ties: Vec<usize> = s.iter().copied().filter(|&k| servers[k].0 == min).collect();
        for &k in &ties {
            let (j, m) = servers[k];
            out[j][m] += weight / ties.len() as f64;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn routing_is_a_distribution((state, policy) in with_policy()) {
        let r = routing_distribution(&policy, &state).unwrap();
        prop_assert!((r.total_mass() - 1.0).abs() < 1e-12);
        r.check_consistent(&state).unwrap();
        prop_assert!(r.a_b() <= r.a1() + 1e-15);
    }

    #[test]
    fn transitions_conserve_servers((state, policy) in with_policy()) {
        let cfg = config(&state, policy);
        let r = routing_distribution(&policy, &state).unwrap();
        for_each_transition(&state, &r, &cfg, |kind, rate| {
            assert!(rate > 0.0);
            let next = state.apply(&kind);
            assert_eq!(next.n(), state.n());
            next.check(state.n(), state.b()).unwrap();
            let dj = next.total_jobs() as i64 - state.total_jobs() as i64;
            match kind {
                EventKind::Arrival { level, .. } if level == state.b() => assert_eq!(dj, 0),
                EventKind::Arrival { .. } => assert_eq!(dj, 1),
                EventKind::Phase1ToPhase2(_) => assert_eq!(dj, 0),
                _ => assert_eq!(dj, -1),
            }
        });
    }

    #[test]
    fn generator_is_linear((state, policy) in with_policy(), a in -3.0f64..3.0, c in -3.0f64..3.0) {
        let cfg = config(&state, policy);
        let r = routing_distribution(&policy, &state).unwrap();
        let f = |s: &AggregateState| s.total_per_server().powi(2);
        let g = |s: &AggregateState| s.s(1, Phase::Second) - s.n_idle() as f64;
        let lhs = apply_generator(|s| a * f(s) + c * g(s), &state, &r, &cfg);
        let rhs = a * apply_generator(f, &state, &r, &cfg) + c * apply_generator(g, &state, &r, &cfg);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        // Constants are annihilated.
        prop_assert_eq!(apply_generator(|_| 4.2, &state, &r, &cfg), 0.0);
    }

    #[test]
    fn pod_with_every_server_sampled_is_jsq(state in state_strategy()) {
        let pod = routing_distribution(&PolicyKind::pod(state.n()), &state).unwrap();
        let jsq = routing_distribution(&PolicyKind::Jsq, &state).unwrap();
        for j in 0..=state.b() {
            for phase in Phase::BOTH {
                prop_assert!((pod.r(j, phase) - jsq.r(j, phase)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn suffix_sums_round_trip(state in state_strategy()) {
        let back = s_to_q(state.n(), &q_to_s(&state)).unwrap();
        prop_assert_eq!(back, state.clone());
        let flat = AggregateState::from_flat(&state.to_flat()).unwrap();
        prop_assert_eq!(flat, state);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn pod_closed_form_matches_enumeration(
        state in state_strategy().prop_filter("small", |s| s.n() <= 7),
        d_frac in 0.0f64..1.0,
        with in any::<bool>(),
    ) {
        let d = 1 + (d_frac * (state.n().min(4)) as f64) as usize;
        let d = d.min(state.n());
        let sampling = if with { PodSampling::WithReplacement } else { PodSampling::WithoutReplacement };
        let mut r = RoutingDistribution::zeros(state.b());
        fill_routing(&PolicyKind::Pod { d, sampling }, &state, &mut r);
        let brute = brute_force_pod(&state, d, sampling);
        for (j, row) in brute.iter().enumerate() {
            for (m, phase) in Phase::BOTH.into_iter().enumerate() {
                prop_assert!((r.r(j, phase) - row[m]).abs() < 1e-12, "j={} m={} {} vs {}", j, m, r.r(j, phase), row[m]);
            }
        }
    }
}
