use dynmatch::engine::{self, EngineConfig, SimState, Streams};
use dynmatch::fluid::{self, beta, beta_closed_form, fluid_step, reflection_residual, FluidState};
use dynmatch::instances;
use dynmatch::network::{MatchingNetwork, RootedTree};
use dynmatch::planner::{solve_spp, tree_epsilons, SppSolution};
use dynmatch::policies::Policy;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Tree {
    net: MatchingNetwork,
    spp: SppSolution,
    tree: RootedTree,
    eps_i: Vec<f64>,
}

fn random_tree(seed: u64, n: usize) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (net, _) = instances::random_gpg_tree(&mut rng, n);
    let spp = solve_spp(&net).unwrap();
    let (_, tree) = spp.rooted_tree(&net).unwrap();
    let eps_i = tree_epsilons(&net, &tree);
    Tree { net, spp, tree, eps_i }
}

fn levels(rng: &mut ChaCha8Rng, t: &RootedTree, total: f64) -> Vec<f64> {
    let mut q: Vec<f64> = (0..t.n())
        .map(|i| if i == t.root() { 0.0 } else { rng.gen_range(0.0..1.0) })
        .collect();
    let s: f64 = q.iter().sum();
    if s > 0.0 {
        q.iter_mut().for_each(|x| *x *= total / s);
    }
    q
}

#[test]
fn fluid_step_from_zero_discards_root_slack() {
    let net = instances::builtin("path6-fig5").unwrap().network;
    let spp = solve_spp(&net).unwrap();
    let (_, tree) = spp.rooted_tree(&net).unwrap();
    let mut s = FluidState::new(&[0.0; 6]);
    for _ in 0..10 {
        s = fluid_step(&tree, &s, net.lambda()).unwrap();
        assert!(fluid::phi(&tree, &s.q).abs() < 1e-12);
    }
    let rates = beta(&tree, net.lambda(), &[0.0; 6]);
    assert!((rates.f - (1.0 - net.lambda()[5])).abs() < 1e-12);
}

#[test]
fn path6_large_start_decreases_by_gap() {
    let net = instances::builtin("path6-fig5").unwrap().network;
    let spp = solve_spp(&net).unwrap();
    let (_, tree) = spp.rooted_tree(&net).unwrap();
    let q0 = [10.0, 10.0, 10.0, 10.0, 10.0, 0.0];
    let horizon = (50.0 / spp.epsilon).ceil() as u64 + 5;
    let rep = fluid::fluid_drift_check(&tree, net.lambda(), spp.epsilon, &q0, horizon).unwrap();
    assert!(rep.pass, "{rep:?}");
    assert!(rep.final_phi < 1e-9);
}

#[test]
fn unit_arrival_matches_integer_ttp() {
    let net = instances::builtin("path4").unwrap().network;
    let tree = RootedTree::new(&net, 3).unwrap();
    let s = FluidState::new(&[1.0, 0.0, 0.0, 0.0]);
    let s1 = fluid_step(&tree, &s, &[0.0, 1.0, 0.0, 0.0]).unwrap();
    assert_eq!(s1.q, vec![0.0; 4]);
    assert_eq!(s1.d[0], 1.0);
}

#[test]
fn one_hot_fluid_reproduces_engine_ttp() {
    for seed in 0..20 {
        let t = random_tree(seed, 2 + seed as usize % 8);
        let cfg = EngineConfig::from_spp(&t.net, &t.spp);
        let ttp = Policy::ttp(t.tree.clone());
        let mut streams = Streams::new(t.net.lambda(), seed, 0);
        let mut state = SimState::empty(&t.net);
        let mut fs = FluidState::new(&vec![0.0; t.net.n()]);
        for _ in 0..2000 {
            let (arrival, _) = engine::advance(&t.net, &cfg, &ttp, &mut state, &mut streams).unwrap();
            let mut e = vec![0.0; t.net.n()];
            e[arrival] = 1.0;
            fs = fluid_step(&t.tree, &fs, &e).unwrap();
            let q: Vec<f64> = state.queues.iter().map(|&x| x as f64).collect();
            assert_eq!(fs.q, q);
        }
    }
}

#[test]
fn drift_on_random_trees() {
    for seed in 0..20 {
        let t = random_tree(100 + seed, 2 + seed as usize % 9);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let total = rng.gen_range(0.0..20.0);
            let q0 = levels(&mut rng, &t.tree, total);
            let horizon = (fluid::phi(&t.tree, &q0) / t.spp.epsilon).ceil() as u64 + 5;
            let rep = fluid::fluid_drift_check(&t.tree, t.net.lambda(), t.spp.epsilon, &q0, horizon).unwrap();
            assert!(rep.pass, "seed {seed}: {rep:?}");
        }
    }
}

#[test]
fn single_extra_arrival_lipschitz() {
    let net = instances::builtin("path6-fig5").unwrap().network;
    let spp = solve_spp(&net).unwrap();
    let (_, tree) = spp.rooted_tree(&net).unwrap();
    let inc = vec![net.lambda().to_vec(); 200];
    for i in 0..6 {
        let mut inc_p = inc.clone();
        inc_p[50][i] += 1.0;
        let rep = fluid::lipschitz_check(&tree, &[2.0, 1.0, 0.0, 3.0, 0.5, 0.0], &inc, &inc_p).unwrap();
        assert!(rep.pass && rep.max_ratio <= 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn closed_form_beta_below_gap(seed in any::<u64>(), n in 2usize..=10, frac in 0.0f64..=1.0) {
        let t = random_tree(seed, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        let q = levels(&mut rng, &t.tree, frac * t.spp.epsilon);
        let rates = beta(&t.tree, t.net.lambda(), &q);
        let closed = beta_closed_form(&t.tree, &t.eps_i, &q);
        for (a, b) in rates.beta.iter().zip(&closed) {
            prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let lr = t.net.lambda()[t.tree.root()];
        prop_assert!((rates.f - (1.0 - lr + rates.phi)).abs() < 1e-12);
    }

    #[test]
    fn beta_recursion_semantics(seed in any::<u64>(), n in 2usize..=10, total in 0.0f64..5.0) {
        let t = random_tree(seed, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 9);
        let q = levels(&mut rng, &t.tree, total);
        let lambda = t.net.lambda();
        let r = beta(&t.tree, lambda, &q);
        for i in 0..n {
            let b = r.beta[i];
            prop_assert!(b >= 0.0 && b <= lambda[i] + 1e-15);
            let avail: f64 = t.tree.children(i).iter().map(|&j| lambda[j] + q[j] - r.beta[j]).sum();
            prop_assert!(avail >= b - 1e-12);
            if !t.tree.children(i).is_empty() {
                prop_assert!((b - lambda[i]).abs() < 1e-12 || (b - avail).abs() < 1e-12);
            } else {
                prop_assert_eq!(b, 0.0);
            }
        }
        let eps = t.spp.epsilon;
        let lr = lambda[t.tree.root()];
        prop_assert!(r.f >= 1.0 - lr + eps.min(r.phi) - 1e-12);
    }

    #[test]
    fn f_is_monotone(seed in any::<u64>(), n in 2usize..=10) {
        let t = random_tree(seed, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        for _ in 0..20 {
            let total = rng.gen_range(0.0..5.0);
            let q = levels(&mut rng, &t.tree, total);
            let qp: Vec<f64> = q.iter().map(|&x| x * rng.gen_range(0.0..=1.0)).collect();
            let f = beta(&t.tree, t.net.lambda(), &q).f;
            let fp = beta(&t.tree, t.net.lambda(), &qp).f;
            prop_assert!(fp <= f + 1e-12);
        }
    }

    #[test]
    fn reflection_identity_along_trajectories(seed in any::<u64>(), n in 2usize..=10) {
        let t = random_tree(seed, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 5);
        let mut s = FluidState::new(&levels(&mut rng, &t.tree, 3.0));
        for _ in 0..200 {
            let a: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.3) { rng.gen_range(0.0..1.0) } else { 0.0 }).collect();
            let next = fluid_step(&t.tree, &s, &a).unwrap();
            prop_assert!(next.q.iter().all(|&x| x >= 0.0));
            prop_assert!(next.d.iter().zip(&s.d).all(|(x, y)| x >= y));
            prop_assert!(reflection_residual(&t.tree, &next) < 1e-9);
            s = next;
        }
    }
}
