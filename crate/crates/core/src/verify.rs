//! Structural checks run by the `verify` subcommand.
//!
//! Each check yields a named pass/fail entry with its worst observed margin.
//! Checks that do not apply to the instance (tree-only checks on a cyclic
//! network, path-only checks elsewhere) are reported as skipped.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analytics::{self, TpLyapunov};
use crate::engine::{self, ArrivalStream, EngineConfig, SimState, Streams};
use crate::error::Result;
use crate::fluid;
use crate::network::{MatchingNetwork, RootedTree};
use crate::planner::{tree_epsilons, SppSolution};
use crate::policies::{Policy, PolicySpec};

pub const DRIFT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub status: Status,
    /// Number of individual comparisons made.
    pub checked: u64,
    pub violations: u64,
    /// Worst margin observed (positive is safe), when meaningful.
    pub worst_margin: Option<f64>,
    pub note: Option<String>,
}

impl CheckResult {
    fn new(name: &str, checked: u64, violations: u64, worst_margin: Option<f64>) -> Self {
        Self {
            name: name.into(),
            status: if violations == 0 { Status::Pass } else { Status::Fail },
            checked,
            violations,
            worst_margin,
            note: None,
        }
    }

    fn skipped(name: &str, why: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: Status::Skipped,
            checked: 0,
            violations: 0,
            worst_margin: None,
            note: Some(why.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub instance: String,
    pub epsilon: f64,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }
}

/// Sizes of the randomized checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub states: usize,
    pub prefix_len: u64,
    pub horizon: u64,
    pub pairs: usize,
    pub fluid_starts: usize,
    pub lipschitz_pairs: usize,
    pub lipschitz_horizon: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            states: 1000,
            prefix_len: 5000,
            horizon: 10_000,
            pairs: 10_000,
            fluid_starts: 100,
            lipschitz_pairs: 50,
            lipschitz_horizon: 10_000,
        }
    }
}

/// Largest per-row residual of `M z* + s* = λ`.
pub fn feasibility_residual(net: &MatchingNetwork, spp: &SppSolution) -> f64 {
    let mut row = spp.s_star.clone();
    for (m, &(a, b)) in net.matches().iter().enumerate() {
        row[a] += spp.z_star[m];
        row[b] += spp.z_star[m];
    }
    row.iter().zip(net.lambda()).map(|(x, l)| (x - l).abs()).fold(0.0, f64::max)
}

/// Runs `policy` for `horizon` periods and counts periods that end with both
/// endpoints of an allowed match non-empty.
pub fn exclusivity_violations(
    net: &MatchingNetwork,
    cfg: &EngineConfig,
    policy: &Policy,
    horizon: u64,
    seed: u64,
) -> Result<u64> {
    let mut streams = Streams::new(net.lambda(), seed, 0);
    let mut state = SimState::empty(net);
    let mut bad = 0;
    for _ in 0..horizon {
        engine::advance(net, cfg, policy, &mut state, &mut streams)?;
        let q = &state.queues;
        let clash = net
            .matches()
            .iter()
            .zip(&cfg.allowed_matches)
            .any(|(&(a, b), &ok)| ok && q[a] > 0 && q[b] > 0);
        bad += u64::from(clash);
    }
    Ok(bad)
}

/// One-step ℓ₁ non-expansion over pairs of independently reached states and
/// every arrival type. Returns `(comparisons, violations)`.
pub fn consistency_violations(
    net: &MatchingNetwork,
    cfg: &EngineConfig,
    policy: &Policy,
    pairs: usize,
    prefix_len: u64,
    seed: u64,
) -> Result<(u64, u64)> {
    let states = analytics::reachable_states(net, cfg, policy, 2 * pairs, prefix_len, seed)?;
    let mut checked = 0;
    let mut bad = 0;
    for pair in states.chunks_exact(2) {
        let before = engine::l1_distance(&pair[0], &pair[1]);
        for a in 0..net.n() {
            let (x, y) = engine::coupled_pair_run(net, cfg, policy, &pair[0], &pair[1], a, 0.0)?;
            checked += 1;
            bad += u64::from(engine::l1_distance(&x, &y) > before);
        }
    }
    Ok((checked, bad))
}

/// PM quadratic drift against `−(2ε/n)‖Q‖₁ + 1` at reachable states.
pub fn pm_drift_check(net: &MatchingNetwork, spp: &SppSolution, states: usize, prefix_len: u64, seed: u64) -> Result<CheckResult> {
    let cfg = EngineConfig::from_spp(net, spp);
    let pm = Policy::build(&PolicySpec::Pm, net, spp)?;
    let over = spp.over_demanded.clone();
    let quad = |q: &[u64]| over.iter().map(|&i| (q[i] as f64).powi(2)).sum::<f64>();
    let mut worst = f64::INFINITY;
    let mut bad = 0;
    let qs = analytics::reachable_states(net, &cfg, &pm, states, prefix_len, seed)?;
    for q in &qs {
        let d = analytics::exact_drift(net, &cfg, &pm, q, quad)?;
        let l1: f64 = q.iter().map(|&x| x as f64).sum();
        let margin = analytics::pm_drift_bound(spp.epsilon, net.n(), l1) - d;
        worst = worst.min(margin);
        bad += u64::from(margin < -DRIFT_TOL);
    }
    Ok(CheckResult::new("pm_quadratic_drift", qs.len() as u64, bad, Some(worst)))
}

/// Tree-priority drift of the weighted Lyapunov function at reachable states.
pub fn tp_drift_check(
    net: &MatchingNetwork,
    spp: &SppSolution,
    tree: &RootedTree,
    states: usize,
    prefix_len: u64,
    seed: u64,
) -> Result<CheckResult> {
    let cfg = EngineConfig::from_spp(net, spp);
    let tp = Policy::tp(tree.clone());
    let eps_i = tree_epsilons(net, tree);
    let lyap = TpLyapunov::new(tree, net.lambda(), &eps_i);
    let mut worst = f64::INFINITY;
    let mut bad = 0;
    let qs = analytics::reachable_states(net, &cfg, &tp, states, prefix_len, seed)?;
    for q in &qs {
        let d = analytics::exact_drift(net, &cfg, &tp, q, |v| lyap.value_u64(v))?;
        let l1: f64 = q.iter().map(|&x| x as f64).sum();
        let margin = analytics::tp_drift_bound(spp.epsilon, tree.height(), net.n(), l1) - d;
        worst = worst.min(margin);
        bad += u64::from(margin < -DRIFT_TOL);
    }
    Ok(CheckResult::new("tp_lyapunov_drift", qs.len() as u64, bad, Some(worst)))
}

/// Fluid drift of Φ from random starting levels.
pub fn fluid_drift_checks(
    tree: &RootedTree,
    lambda: &[f64],
    epsilon: f64,
    starts: usize,
    seed: u64,
) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let mut bad = 0;
    for _ in 0..starts {
        let q0 = random_levels(&mut rng, tree, 50.0);
        let total = fluid::phi(tree, &q0);
        let horizon = (total / epsilon).ceil() as u64 + 10;
        let rep = fluid::fluid_drift_check(tree, lambda, epsilon, &q0, horizon)?;
        worst = worst.min(rep.worst_slack);
        bad += u64::from(!rep.pass);
    }
    Ok(CheckResult::new("fluid_drift", starts as u64, bad, Some(worst)))
}

/// Random non-negative levels on non-root nodes, each below `scale`.
pub fn random_levels<R: Rng + ?Sized>(rng: &mut R, tree: &RootedTree, scale: f64) -> Vec<f64> {
    (0..tree.n())
        .map(|i| if i == tree.root() { 0.0 } else { rng.gen_range(0.0..scale) })
        .collect()
}

/// Sampled unit arrivals against fluid arrivals `tλ`.
pub fn lipschitz_checks(
    tree: &RootedTree,
    lambda: &[f64],
    pairs: usize,
    horizon: u64,
    seed: u64,
) -> Result<CheckResult> {
    let n = tree.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fluid_inc = vec![lambda.to_vec(); horizon as usize];
    let mut worst_ratio = 0.0f64;
    let mut bad = 0;
    for p in 0..pairs {
        let q0 = random_levels(&mut rng, tree, 5.0);
        let mut stream = ArrivalStream::new(lambda, seed, p as u64);
        let sampled: Vec<Vec<f64>> = (0..horizon)
            .map(|_| {
                let mut e = vec![0.0; n];
                e[stream.draw()] = 1.0;
                e
            })
            .collect();
        let rep = fluid::lipschitz_check(tree, &q0, &sampled, &fluid_inc)?;
        worst_ratio = worst_ratio.max(rep.max_ratio);
        bad += u64::from(!rep.pass || rep.max_ratio > 1.0);
    }
    Ok(CheckResult::new("fluid_lipschitz", pairs as u64, bad, Some(1.0 - worst_ratio)))
}

/// Truncation monotonicity for each depth parity class, and the warm-up
/// systems when the instance is a path rooted at its last type.
pub fn truncation_checks(
    net: &MatchingNetwork,
    spp: &SppSolution,
    tree: &RootedTree,
    horizon: u64,
    seed: u64,
) -> Result<Vec<CheckResult>> {
    let cfg = EngineConfig::from_spp(net, spp);
    let tp = Policy::tp(tree.clone());
    let mut out = Vec::new();
    let mut checked = 0;
    let mut bad = 0;
    for parity in 0..2 {
        let set: Vec<usize> = (0..net.n()).filter(|&i| tree.depth(i) % 2 == parity).collect();
        let run = engine::coupled_truncated_run(net, &cfg, &tp, tree, &set, &vec![0; net.n()], horizon, seed, 0)?;
        checked += run.original.len() as u64;
        bad += engine::truncation_violations(tree, &set, &run) as u64;
    }
    out.push(CheckResult::new("truncation_monotone", checked, bad, None));

    let n = net.n();
    let is_path = net.matches().iter().enumerate().all(|(m, &e)| e == (m, m + 1)) && tree.root() == n - 1;
    if is_path {
        let mut checked = 0;
        let mut bad = 0;
        for kept in 0..n - 1 {
            let run = engine::warmup_system_run(net, &cfg, &tp, tree, kept, horizon, seed, 0)?;
            checked += run.original.len() as u64;
            bad += engine::warmup_violations(kept, &run) as u64;
        }
        out.push(CheckResult::new("warmup_coupling", checked, bad, None));
    } else {
        out.push(CheckResult::skipped("warmup_coupling", "instance is not a path rooted at its last type"));
    }
    Ok(out)
}

/// Runs every applicable check on one instance.
pub fn verify_instance(name: &str, net: &MatchingNetwork, spp: &SppSolution, opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let resid = feasibility_residual(net, spp);
    checks.push(CheckResult::new("spp_feasibility", net.n() as u64, u64::from(resid > 1e-9), Some(1e-9 - resid)));
    let cfg = EngineConfig::from_spp(net, spp);
    let tree = spp.rooted_tree(net).ok().map(|(_, t)| t);

    if let (Some(tree), Some(eps)) = (&tree, &spp.epsilon_i) {
        let alt = tree_epsilons(net, tree);
        let gap = alt.iter().zip(eps).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        checks.push(CheckResult::new("tree_epsilon_crosscheck", net.n() as u64, u64::from(gap > 1e-9), Some(1e-9 - gap)));
    } else {
        checks.push(CheckResult::skipped("tree_epsilon_crosscheck", "reduced network is not a rooted tree"));
    }

    let mut specs = vec![PolicySpec::Pm, PolicySpec::Lq];
    if tree.is_some() {
        specs.push(PolicySpec::Tp);
    }
    for spec in &specs {
        let policy = Policy::build(spec, net, spp)?;
        let bad = exclusivity_violations(net, &cfg, &policy, opts.horizon, opts.seed)?;
        checks.push(CheckResult::new(&format!("greedy_exclusivity_{}", spec.name()), opts.horizon, bad, None));
    }

    checks.push(pm_drift_check(net, spp, opts.states, opts.prefix_len, opts.seed)?);

    match &tree {
        Some(tree) => {
            checks.push(tp_drift_check(net, spp, tree, opts.states, opts.prefix_len, opts.seed)?);
            checks.push(fluid_drift_checks(tree, net.lambda(), spp.epsilon, opts.fluid_starts, opts.seed)?);
            checks.push(lipschitz_checks(tree, net.lambda(), opts.lipschitz_pairs, opts.lipschitz_horizon, opts.seed)?);
            checks.extend(truncation_checks(net, spp, tree, opts.horizon, opts.seed)?);
            for spec in [PolicySpec::Tp, PolicySpec::Ttp, PolicySpec::Lq] {
                let policy = Policy::build(&spec, net, spp)?;
                let (c, bad) = consistency_violations(net, &cfg, &policy, opts.pairs, 200, opts.seed)?;
                checks.push(CheckResult::new(&format!("consistency_{}", spec.name()), c, bad, None));
            }
        }
        None => {
            for name in ["tp_lyapunov_drift", "fluid_drift", "fluid_lipschitz", "truncation_monotone", "warmup_coupling"] {
                checks.push(CheckResult::skipped(name, "reduced network is not a rooted tree"));
            }
            let policy = Policy::build(&PolicySpec::Lq, net, spp)?;
            let (c, bad) = consistency_violations(net, &cfg, &policy, opts.pairs, 200, opts.seed)?;
            checks.push(CheckResult::new("consistency_lq", c, bad, None));
        }
    }
    Ok(VerifyReport {
        instance: name.to_string(),
        epsilon: spp.epsilon,
        checks,
    })
}
