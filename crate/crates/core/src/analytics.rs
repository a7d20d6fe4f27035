//! Lyapunov functions, exact one-step drift, regret estimation and a
//! concentration check for the arrival process.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{self, ArrivalStream, EngineConfig, SimState, Streams};
use crate::error::{Error, Result};
use crate::fmt::g9;
use crate::hindsight::HindsightSolver;
use crate::network::{MatchingNetwork, RootedTree};
use crate::planner::SppSolution;
use crate::policies::{Action, Policy};

/// Weighted quadratic Lyapunov function for tree priority.
#[derive(Debug, Clone, Serialize)]
pub struct TpLyapunov {
    pub alpha: Vec<f64>,
    #[serde(skip)]
    tree: RootedTree,
}

/// `α_i = 1 + (1/ε_i) Σ_{j ∈ P(i)} α_j (λ_j − ε_j)`, ancestors first.
pub fn tp_alpha(tree: &RootedTree, lambda: &[f64], eps_i: &[f64]) -> Vec<f64> {
    let mut alpha = vec![1.0; tree.n()];
    for &i in tree.top_down() {
        if i == tree.root() {
            continue;
        }
        let s: f64 = tree
            .same_parity_ancestors(i)
            .iter()
            .map(|&j| alpha[j] * (lambda[j] - eps_i[j]))
            .sum();
        alpha[i] = 1.0 + s / eps_i[i];
    }
    alpha
}

impl TpLyapunov {
    pub fn new(tree: &RootedTree, lambda: &[f64], eps_i: &[f64]) -> Self {
        Self {
            alpha: tp_alpha(tree, lambda, eps_i),
            tree: tree.clone(),
        }
    }

    /// `f_i(v) = Σ_{j ∈ T⁻(i)} (−1)^{d(i,j)+1} v_j`.
    pub fn f(&self, i: usize, v: &[f64]) -> f64 {
        f_value(&self.tree, i, v)
    }

    /// `Σ_{i ∈ A₀} α_i (f_i(v)⁺)²`.
    pub fn value(&self, v: &[f64]) -> f64 {
        (0..self.tree.n())
            .filter(|&i| i != self.tree.root())
            .map(|i| self.alpha[i] * self.f(i, v).max(0.0).powi(2))
            .sum()
    }

    pub fn value_u64(&self, q: &[u64]) -> f64 {
        self.value(&to_f64(q))
    }

    pub fn tree(&self) -> &RootedTree {
        &self.tree
    }
}

pub fn f_value(tree: &RootedTree, i: usize, v: &[f64]) -> f64 {
    tree.strict_subtree(i)
        .into_iter()
        .map(|j| {
            if tree.descendant_distance(i, j) % 2 == 1 {
                v[j]
            } else {
                -v[j]
            }
        })
        .sum()
}

pub fn to_f64(q: &[u64]) -> Vec<f64> {
    q.iter().map(|&x| x as f64).collect()
}

/// `(1 + ε⁻¹)^⌊(d − 1)/2⌋`.
pub fn alpha_bound(epsilon: f64, depth: usize) -> f64 {
    (1.0 + 1.0 / epsilon).powi((depth.saturating_sub(1) / 2) as i32)
}

/// Right-hand side of the tree-priority one-step drift bound.
pub fn tp_drift_bound(epsilon: f64, height: usize, n: usize, l1: f64) -> f64 {
    -(epsilon / 2f64.powi(height as i32 - 1)) * l1 + n as f64 * alpha_bound(epsilon, height)
}

/// Right-hand side of the probabilistic-matching quadratic drift bound.
pub fn pm_drift_bound(epsilon: f64, n: usize, l1: f64) -> f64 {
    -2.0 * epsilon / n as f64 * l1 + 1.0
}

/// Whether `2^{-d_r} Σ_{A₀} q_i ≤ Σ_{i ∈ E₁ ∩ E₂} f_i(q)`, where the sets range
/// over every node, the root included.
pub fn conn_drift_holds(tree: &RootedTree, q: &[f64]) -> bool {
    let r = tree.root();
    let lhs: f64 = (0..tree.n()).filter(|&i| i != r).map(|i| q[i]).sum::<f64>()
        / 2f64.powi(tree.height() as i32);
    let rhs: f64 = (0..tree.n())
        .filter(|&i| tree.children(i).iter().any(|&c| q[c] > 0.0))
        .map(|i| f_value(tree, i, q))
        .filter(|&f| f > 0.0)
        .sum();
    lhs <= rhs + 1e-12
}

fn apply(q: &[u64], arrival: usize, action: Action) -> Vec<u64> {
    let mut next = q.to_vec();
    match action {
        Action::MatchWith(p) => next[p] -= 1,
        Action::Enqueue => next[arrival] += 1,
        Action::Discard => {}
    }
    next
}

/// `E[V(Q(t+1)) − V(Q(t)) | Q(t) = q]`, by enumerating arrival types and the
/// policy's decision distribution.
pub fn exact_drift<V: Fn(&[u64]) -> f64>(
    net: &MatchingNetwork,
    cfg: &EngineConfig,
    policy: &Policy,
    q: &[u64],
    v: V,
) -> Result<f64> {
    let base = v(q);
    let mut drift = 0.0;
    for (a, &la) in net.lambda().iter().enumerate() {
        for (action, p) in policy.outcomes(q, a, cfg.truncated[a])? {
            drift += la * p * (v(&apply(q, a, action)) - base);
        }
    }
    Ok(drift)
}

/// Monte Carlo estimate of the same drift: (mean, standard error).
pub fn sampled_drift<V: Fn(&[u64]) -> f64>(
    net: &MatchingNetwork,
    cfg: &EngineConfig,
    policy: &Policy,
    q: &[u64],
    v: V,
    samples: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    let base = v(q);
    let mut streams = Streams::new(net.lambda(), seed, 0);
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..samples {
        let mut st = SimState::with_queues(net, q.to_vec());
        engine::advance(net, cfg, policy, &mut st, &mut streams)?;
        let d = v(&st.queues) - base;
        s1 += d;
        s2 += d * d;
    }
    let n = samples as f64;
    let mean = s1 / n;
    let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Queue vectors reached from empty after random prefix lengths in
/// `0..=max_len`, one independent replication per state.
pub fn reachable_states(
    net: &MatchingNetwork,
    cfg: &EngineConfig,
    policy: &Policy,
    count: usize,
    max_len: u64,
    seed: u64,
) -> Result<Vec<Vec<u64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lens: Vec<u64> = (0..count).map(|_| rng.gen_range(0..=max_len)).collect();
    lens.into_par_iter()
        .enumerate()
        .map(|(k, len)| engine::reachable_state(net, cfg, policy, len, seed, k as u64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyCurve {
    pub policy: String,
    pub mean_regret: Vec<f64>,
    pub ci_half: Vec<f64>,
    pub mean_total_queue: Vec<f64>,
    pub sup_regret: f64,
    /// Checkpoint index where `sup_regret` is attained.
    pub sup_index: usize,
    /// Replication/checkpoint pairs where the policy out-earned the offline
    /// optimum (should be zero).
    pub dominance_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretReport {
    pub checkpoints: Vec<u64>,
    pub replications: u64,
    pub curves: Vec<PolicyCurve>,
}

struct RepResult {
    regret: Vec<Vec<f64>>,
    queue: Vec<Vec<f64>>,
    violations: Vec<u64>,
}

/// Monte Carlo regret with common random numbers: within a replication every
/// policy and the offline optimum see the same arrival sequence.
#[allow(clippy::too_many_arguments)]
pub fn regret_experiment(
    net: &MatchingNetwork,
    spp: &SppSolution,
    policies: &[Policy],
    horizon: u64,
    checkpoints: &[u64],
    replications: u64,
    seed: u64,
) -> Result<RegretReport> {
    if replications < 2 {
        return Err(Error::config("replications", "need at least 2 replications"));
    }
    let mut times: Vec<u64> = checkpoints.iter().copied().filter(|&t| t <= horizon).collect();
    times.sort_unstable();
    times.dedup();
    let cfg = EngineConfig::from_spp(net, spp);
    let solver = HindsightSolver::new(net);
    let over = &spp.over_demanded;

    let per_rep: Vec<RepResult> = (0..replications)
        .into_par_iter()
        .map(|rep| -> Result<RepResult> {
            let mut regret = Vec::with_capacity(policies.len());
            let mut queue = Vec::with_capacity(policies.len());
            let mut violations = Vec::with_capacity(policies.len());
            let mut optimum: Option<(Vec<Vec<u64>>, Vec<f64>)> = None;
            for policy in policies {
                let mut streams = Streams::new(net.lambda(), seed, rep);
                let snaps = engine::run(net, &cfg, policy, SimState::empty(net), horizon, &times, &mut streams)?;
                let counts: Vec<Vec<u64>> = snaps.iter().map(|s| s.arrivals.clone()).collect();
                let best = match &optimum {
                    Some((c, v)) => {
                        debug_assert_eq!(c, &counts, "arrival streams must coincide");
                        v.clone()
                    }
                    None => {
                        let v = counts.iter().map(|c| solver.value(c)).collect::<Result<Vec<f64>>>()?;
                        optimum = Some((counts, v.clone()));
                        v
                    }
                };
                let reg: Vec<f64> = snaps.iter().zip(&best).map(|(s, b)| b - s.reward).collect();
                violations.push(reg.iter().filter(|&&r| r < -1e-9).count() as u64);
                regret.push(reg);
                queue.push(snaps.iter().map(|s| s.total_queue(over) as f64).collect());
            }
            Ok(RepResult {
                regret,
                queue,
                violations,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let reps = replications as f64;
    let k = times.len();
    let curves = policies
        .iter()
        .enumerate()
        .map(|(p, policy)| {
            let mut sum = vec![0.0; k];
            let mut sq = vec![0.0; k];
            let mut qsum = vec![0.0; k];
            let mut viol = 0;
            for r in &per_rep {
                for c in 0..k {
                    let x = r.regret[p][c];
                    sum[c] += x;
                    sq[c] += x * x;
                    qsum[c] += r.queue[p][c];
                }
                viol += r.violations[p];
            }
            let mean: Vec<f64> = sum.iter().map(|s| s / reps).collect();
            let ci: Vec<f64> = (0..k)
                .map(|c| {
                    let var = ((sq[c] - reps * mean[c] * mean[c]) / (reps - 1.0)).max(0.0);
                    1.96 * (var / reps).sqrt()
                })
                .collect();
            let (sup_index, sup) = mean
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            PolicyCurve {
                policy: policy.name().to_string(),
                mean_regret: mean,
                ci_half: ci,
                mean_total_queue: qsum.iter().map(|s| s / reps).collect(),
                sup_regret: if k == 0 { 0.0 } else { sup },
                sup_index,
                dominance_violations: viol,
            }
        })
        .collect();
    Ok(RegretReport {
        checkpoints: times,
        replications,
        curves,
    })
}

impl RegretReport {
    pub const CSV_HEADER: &'static str = "policy,t,mean_regret,ci_half,mean_total_queue,sup_regret_flag";

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for c in &self.curves {
            for (k, &t) in self.checkpoints.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    c.policy,
                    t,
                    g9(c.mean_regret[k]),
                    g9(c.ci_half[k]),
                    g9(c.mean_total_queue[k]),
                    u8::from(k == c.sup_index)
                )?;
            }
        }
        Ok(())
    }

    pub fn curve(&self, policy: &str) -> Option<&PolicyCurve> {
        self.curves.iter().find(|c| c.policy == policy)
    }

    /// Least-squares slope of mean regret against `ln t` over checkpoints in
    /// `[T/10, T]`.
    pub fn final_decade_slope(&self, policy: &str) -> Option<f64> {
        let c = self.curve(policy)?;
        let last = *self.checkpoints.last()?;
        let pts: Vec<(f64, f64)> = self
            .checkpoints
            .iter()
            .zip(&c.mean_regret)
            .filter(|(&t, _)| t > 0 && t * 10 >= last)
            .map(|(&t, &r)| ((t as f64).ln(), r))
            .collect();
        least_squares_slope(&pts)
    }
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub n: usize,
    pub horizon: u64,
    pub replications: u64,
    pub mean: f64,
    pub std_error: f64,
    pub bound: f64,
    pub pass: bool,
}

/// `Z(T) = T^{-1/2} Σ_i max_{t ≤ T} |A_i(t) − λ_i t|`, averaged over
/// replications and compared with `2√n` (plus three standard errors).
pub fn concentration_check(lambda: &[f64], horizon: u64, replications: u64, seed: u64) -> Result<ConcentrationReport> {
    if horizon == 0 {
        return Err(Error::config("horizon", "must be at least 1"));
    }
    let n = lambda.len();
    let z: Vec<f64> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let mut stream = ArrivalStream::new(lambda, seed, rep);
            let mut a = vec![0u64; n];
            let mut dev = vec![0.0f64; n];
            for t in 1..=horizon {
                a[stream.draw()] += 1;
                for i in 0..n {
                    dev[i] = dev[i].max((a[i] as f64 - lambda[i] * t as f64).abs());
                }
            }
            dev.iter().sum::<f64>() / (horizon as f64).sqrt()
        })
        .collect();
    let reps = replications as f64;
    let mean = z.iter().sum::<f64>() / reps;
    let var = if replications > 1 {
        z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1.0)
    } else {
        0.0
    };
    let std_error = (var / reps).sqrt();
    let bound = 2.0 * (n as f64).sqrt();
    Ok(ConcentrationReport {
        n,
        horizon,
        replications,
        mean,
        std_error,
        bound,
        pass: mean <= bound + 3.0 * std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::planner::solve_spp;
    use crate::policies::PolicySpec;

    #[test]
    fn path6_alpha() {
        let net = instances::builtin("path6-fig5").unwrap().network;
        let spp = solve_spp(&net).unwrap();
        let (_, tree) = spp.rooted_tree(&net).unwrap();
        let alpha = tp_alpha(&tree, net.lambda(), spp.epsilon_i.as_ref().unwrap());
        let expect = [6.0, 4.0, 2.0, 1.0, 1.0, 1.0];
        for (a, e) in alpha.iter().zip(expect) {
            assert!((a - e).abs() < 1e-9, "{alpha:?}");
        }
    }

    #[test]
    fn zero_state_drift_is_nonnegative() {
        let net = instances::builtin("path6-fig5").unwrap().network;
        let spp = solve_spp(&net).unwrap();
        let cfg = EngineConfig::from_spp(&net, &spp);
        let policy = Policy::build(&PolicySpec::Tp, &net, &spp).unwrap();
        let (_, tree) = spp.rooted_tree(&net).unwrap();
        let lyap = TpLyapunov::new(&tree, net.lambda(), spp.epsilon_i.as_ref().unwrap());
        let d = exact_drift(&net, &cfg, &policy, &[0; 6], |q| lyap.value_u64(q)).unwrap();
        assert!(d >= 0.0);
    }

    #[test]
    fn short_path_root_term_needed() {
        let net = instances::path(&[0.2, 0.3, 0.5], &[1.0, 1.0]).unwrap();
        let tree = RootedTree::new(&net, 2).unwrap();
        assert!(conn_drift_holds(&tree, &[0.0, 10.0, 0.0]));
    }

    #[test]
    fn slope_of_line() {
        let s = least_squares_slope(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]).unwrap();
        assert!((s - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_horizon_regret() {
        let net = instances::builtin("path4").unwrap().network;
        let spp = solve_spp(&net).unwrap();
        let policies = vec![Policy::build(&PolicySpec::Tp, &net, &spp).unwrap()];
        let rep = regret_experiment(&net, &spp, &policies, 0, &[0], 3, 1).unwrap();
        assert_eq!(rep.curves[0].mean_regret, vec![0.0]);
    }

    #[test]
    fn single_type_has_no_deviation() {
        let rep = concentration_check(&[1.0], 100, 5, 0).unwrap();
        assert_eq!(rep.mean, 0.0);
    }
}
