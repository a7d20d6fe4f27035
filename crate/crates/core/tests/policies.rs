use dynmatch::engine::{self, EngineConfig, SimState};
use dynmatch::instances;
use dynmatch::planner::{solve_spp, BasisResolver};
use dynmatch::policies::{
    pm_probabilities, tp_orders, ttp_orders, Action, Granularity, Policy, PolicySpec, Scope,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn path4_run(spec: PolicySpec, arrivals: &[usize]) -> SimState {
    let net = instances::builtin("path4").unwrap().network;
    let spp = solve_spp(&net).unwrap();
    let cfg = EngineConfig::from_spp(&net, &spp);
    let policy = Policy::build(&spec, &net, &spp).unwrap();
    let mut state = SimState::empty(&net);
    for &a in arrivals {
        engine::advance_with(&net, &cfg, &policy, &mut state, a, 0.5).unwrap();
    }
    state
}

#[test]
fn tp_matches_on_second_arrival() {
    // Arrivals to types 3 and 2 (0-based 2, 1).
    let s = path4_run(PolicySpec::Tp, &[2, 1]);
    assert_eq!(s.queues, vec![0, 0, 0, 0]);
    assert_eq!(s.matches, vec![0, 1, 0]);
}

#[test]
fn ttp_holds_both_arrivals() {
    let s = path4_run(PolicySpec::Ttp, &[2, 1]);
    assert_eq!(s.queues, vec![0, 1, 1, 0]);
    assert_eq!(s.matches, vec![0, 0, 0]);
}

#[test]
fn ttp_root_arrival_discarded_when_children_empty() {
    let s = path4_run(PolicySpec::Ttp, &[3]);
    assert_eq!(s.queues, vec![0; 4]);
    assert_eq!(s.discarded[3], 1);
}

#[test]
fn information_classes() {
    let net = instances::builtin("path6-fig5").unwrap().network;
    let spp = solve_spp(&net).unwrap();
    let info = |s| Policy::build(&s, &net, &spp).unwrap().info();
    assert_eq!(info(PolicySpec::Pm).scope, Scope::Global);
    assert_eq!(info(PolicySpec::Pm).granularity, Granularity::Availability);
    for s in [PolicySpec::Tp, PolicySpec::Ttp] {
        assert_eq!(info(s.clone()).scope, Scope::Local);
        assert_eq!(info(s).granularity, Granularity::Availability);
    }
    assert_eq!(info(PolicySpec::Lq).granularity, Granularity::QueueLength);
}

#[test]
fn tree_policies_rejected_on_cycle() {
    let net = instances::builtin("cycle5").unwrap().network;
    let spp = solve_spp(&net).unwrap();
    for s in [PolicySpec::Tp, PolicySpec::Ttp, PolicySpec::Adversarial] {
        assert!(Policy::build(&s, &net, &spp).is_err());
    }
}

#[test]
fn static_instantiations_agree_on_random_states() {
    let net = instances::builtin("path6-fig5").unwrap().network;
    let spp = solve_spp(&net).unwrap();
    let (_, tree) = spp.rooted_tree(&net).unwrap();
    let tp = Policy::tp(tree.clone());
    let ttp = Policy::ttp(tree.clone());
    let tp_static = Policy::static_priority("tp-static", tp_orders(&tree));
    let ttp_static = Policy::static_priority("ttp-static", ttp_orders(&tree));
    let truncated = spp.truncation();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let q: Vec<u64> = (0..net.n()).map(|_| rng.gen_range(0..3)).collect();
        for a in 0..net.n() {
            let t = truncated[a];
            assert_eq!(
                tp.decide_with(&q, a, t, 0.0).unwrap().action,
                tp_static.decide_with(&q, a, t, 0.0).unwrap().action
            );
            assert_eq!(
                ttp.decide_with(&q, a, t, 0.0).unwrap().action,
                ttp_static.decide_with(&q, a, t, 0.0).unwrap().action
            );
        }
    }
}

#[test]
fn tp_prefers_smallest_child() {
    // Star rooted at 0 with leaves 1..3: arrival at the root sees children 1..3.
    let raw = serde_json::from_value(serde_json::json!({
        "n": 4, "matches": [[0, 1], [0, 2], [0, 3]],
        "lambda": [0.7, 0.1, 0.1, 0.1], "rewards": [1.0, 1.0, 1.0]
    }))
    .unwrap();
    let net = dynmatch::network::MatchingNetwork::validate(&raw).unwrap();
    let tree = dynmatch::network::root_tree(&net, 0).unwrap();
    let tp = Policy::tp(tree);
    let d = tp.decide_with(&[0, 0, 1, 1], 0, true, 0.0).unwrap();
    assert_eq!(d.action, Action::MatchWith(2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn pm_weights_form_distribution(seed in any::<u64>(), n in 2usize..=8, mask in any::<u64>(), pick in any::<usize>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, _) = instances::random_gpg_tree(&mut rng, n);
        let spp = solve_spp(&net).unwrap();
        let resolver = BasisResolver::new(&net, &spp).unwrap();
        let (reduced, map) = spp.reduced_network(&net);
        let avail: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        let arrival = pick % n;
        let probs = pm_probabilities(&reduced, &map, &resolver, &avail, arrival).unwrap();
        let total: f64 = probs.iter().map(|p| p.1).sum();
        let any_partner = net.neighbors(arrival).iter().any(|&(k, _)| avail[k]);
        if any_partner {
            prop_assert!((total - 1.0).abs() < 1e-12);
        } else {
            prop_assert!(probs.is_empty());
        }
        for &(k, w) in &probs {
            prop_assert!(avail[k] && w > 0.0);
            prop_assert!(net.match_index(arrival, k).is_some());
        }
    }

    #[test]
    fn decisions_respect_queue_state(seed in any::<u64>(), a in 0usize..6) {
        let net = instances::builtin("path6-fig5").unwrap().network;
        let spp = solve_spp(&net).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q: Vec<u64> = (0..6).map(|_| rng.gen_range(0..2)).collect();
        for spec in [PolicySpec::Pm, PolicySpec::Tp, PolicySpec::Ttp, PolicySpec::Lq] {
            let p = Policy::build(&spec, &net, &spp).unwrap();
            let truncated = spp.truncation()[a];
            let d = p.decide_with(&q, a, truncated, rng.gen()).unwrap();
            match d.action {
                Action::MatchWith(k) => prop_assert!(q[k] > 0 && net.match_index(a, k).is_some()),
                Action::Enqueue => prop_assert!(!truncated),
                Action::Discard => prop_assert!(truncated),
            }
        }
    }
}
