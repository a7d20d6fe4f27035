//! Truncated tree priority with fractional arrivals.
//!
//! Nodes are visited bottom-up; each node matches its new arrivals against
//! whatever mass its children hold (children drained in ascending index),
//! enqueues the remainder, and the root discards it. Everything here exists
//! to check drift and Lipschitz statements numerically.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::RootedTree;

pub const FLUID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluidState {
    pub t: u64,
    pub q0: Vec<f64>,
    pub q: Vec<f64>,
    /// Cumulative arrivals.
    pub a: Vec<f64>,
    /// Cumulative matches, indexed by child node (its match to the parent).
    pub d: Vec<f64>,
    /// `R_i = q_i(0) + A_i − Σ_{j ∈ C(i)} D_j`.
    pub r: Vec<f64>,
    /// Running `max_s [A_i(s) − Σ_{j ∈ C(i)} R_j(s)]⁺`.
    pub reflect_max: Vec<f64>,
}

impl FluidState {
    pub fn new(q0: &[f64]) -> Self {
        let n = q0.len();
        Self {
            t: 0,
            q0: q0.to_vec(),
            q: q0.to_vec(),
            a: vec![0.0; n],
            d: vec![0.0; n],
            r: q0.to_vec(),
            reflect_max: vec![0.0; n],
        }
    }
}

/// Total mass held by over-demanded (non-root) nodes.
pub fn phi(tree: &RootedTree, q: &[f64]) -> f64 {
    (0..q.len()).filter(|&i| i != tree.root()).map(|i| q[i]).sum()
}

/// Advances one period with arrival vector `arrivals`.
pub fn fluid_step(tree: &RootedTree, state: &FluidState, arrivals: &[f64]) -> Result<FluidState> {
    if let Some((i, &v)) = arrivals.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeArrival { index: i, value: v });
    }
    let mut s = state.clone();
    s.t += 1;
    for i in tree.bottom_up() {
        let mut incoming = arrivals[i];
        s.a[i] += incoming;
        for &c in tree.children(i) {
            if incoming <= 0.0 {
                break;
            }
            let take = incoming.min(s.q[c]);
            if take > 0.0 {
                s.q[c] -= take;
                s.d[c] += take;
                incoming -= take;
            }
        }
        if i != tree.root() {
            s.q[i] += incoming;
        }
    }
    for i in 0..tree.n() {
        let drained: f64 = tree.children(i).iter().map(|&c| s.d[c]).sum();
        s.r[i] = s.q0[i] + s.a[i] - drained;
    }
    for i in 0..tree.n() {
        let child_r: f64 = tree.children(i).iter().map(|&c| s.r[c]).sum();
        s.reflect_max[i] = s.reflect_max[i].max(s.a[i] - child_r);
    }
    Ok(s)
}

/// Largest violation of the reflection identity
/// `Σ_{C(i)} q_j = Σ_{C(i)} R_j − A_i + max_s [A_i(s) − Σ_{C(i)} R_j(s)]⁺`
/// and of `R_i = q_i + D_i` over non-root nodes.
pub fn reflection_residual(tree: &RootedTree, s: &FluidState) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..tree.n() {
        let cs = tree.children(i);
        let lhs: f64 = cs.iter().map(|&c| s.q[c]).sum();
        let child_r: f64 = cs.iter().map(|&c| s.r[c]).sum();
        let rhs = child_r - s.a[i] + s.reflect_max[i];
        worst = worst.max((lhs - rhs).abs());
        if i != tree.root() {
            worst = worst.max((s.r[i] - s.q[i] - s.d[i]).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluidRates {
    pub beta: Vec<f64>,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "Phi")]
    pub phi: f64,
}

/// One-period matching rates under fluid arrivals `lambda` from state `q`.
pub fn beta(tree: &RootedTree, lambda: &[f64], q: &[f64]) -> FluidRates {
    let n = tree.n();
    let mut b = vec![0.0; n];
    for i in tree.bottom_up() {
        let cs = tree.children(i);
        if cs.is_empty() {
            continue;
        }
        let avail: f64 = cs.iter().map(|&j| lambda[j] + q[j] - b[j]).sum();
        b[i] = lambda[i].min(avail);
    }
    let r = tree.root();
    let f = b[r] + 2.0 * (0..n).filter(|&i| i != r).map(|i| b[i]).sum::<f64>();
    FluidRates {
        beta: b,
        f,
        phi: phi(tree, q),
    }
}

/// `β_i = Σ_{C(i)} ε_j − Σ_{j ∈ T⁻(i)} (−1)^{d(i,j)} q_j`, valid when `Φ(q) ≤ ε`.
pub fn beta_closed_form(tree: &RootedTree, eps_i: &[f64], q: &[f64]) -> Vec<f64> {
    (0..tree.n())
        .map(|i| {
            let base: f64 = tree.children(i).iter().map(|&j| eps_i[j]).sum();
            let alt: f64 = tree
                .strict_subtree(i)
                .into_iter()
                .map(|j| {
                    let sign = if tree.descendant_distance(i, j) % 2 == 0 { 1.0 } else { -1.0 };
                    sign * q[j]
                })
                .sum();
            base - alt
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub pass: bool,
    /// Smallest `(Φ(t) − ε)⁺ − Φ(t+1)` observed.
    pub worst_slack: f64,
    pub steps: u64,
    pub final_phi: f64,
}

/// Runs fluid arrivals `A(t) = tλ` from `q0` and checks
/// `Φ(q(t+1)) ≤ (Φ(q(t)) − ε)⁺` (up to [`FLUID_TOL`]) at every step.
pub fn fluid_drift_check(
    tree: &RootedTree,
    lambda: &[f64],
    epsilon: f64,
    q0: &[f64],
    horizon: u64,
) -> Result<DriftReport> {
    let mut s = FluidState::new(q0);
    let mut worst = f64::INFINITY;
    let mut prev = phi(tree, &s.q);
    for _ in 0..horizon {
        s = fluid_step(tree, &s, lambda)?;
        let now = phi(tree, &s.q);
        worst = worst.min((prev - epsilon).max(0.0) - now);
        prev = now;
    }
    Ok(DriftReport {
        pass: worst >= -FLUID_TOL,
        worst_slack: if horizon == 0 { 0.0 } else { worst },
        steps: horizon,
        final_phi: prev,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub pass: bool,
    /// Largest observed `LHS / RHS` (steps with a zero right-hand side are
    /// skipped after checking the left-hand side vanishes).
    pub max_ratio: f64,
    pub worst_reflection_residual: f64,
}

/// Compares the trajectories driven by per-period arrival increments `inc`
/// and `inc_prime` from the same `q0`, checking
/// `|Φ(q) − Φ(q')| ≤ 2(d_r + 1) Σ_i max_{s≤t} |A_i(s) − A'_i(s)|`.
pub fn lipschitz_check(
    tree: &RootedTree,
    q0: &[f64],
    inc: &[Vec<f64>],
    inc_prime: &[Vec<f64>],
) -> Result<LipschitzReport> {
    let n = tree.n();
    let k = 2.0 * (tree.height() as f64 + 1.0);
    let mut s = FluidState::new(q0);
    let mut sp = FluidState::new(q0);
    let mut gap = vec![0.0f64; n];
    let mut pass = true;
    let mut max_ratio = 0.0f64;
    let mut resid = 0.0f64;
    for (x, y) in inc.iter().zip(inc_prime) {
        s = fluid_step(tree, &s, x)?;
        sp = fluid_step(tree, &sp, y)?;
        for i in 0..n {
            gap[i] = gap[i].max((s.a[i] - sp.a[i]).abs());
        }
        let lhs = (phi(tree, &s.q) - phi(tree, &sp.q)).abs();
        let rhs = k * gap.iter().sum::<f64>();
        if lhs > rhs + FLUID_TOL {
            pass = false;
        }
        if rhs > FLUID_TOL {
            max_ratio = max_ratio.max(lhs / rhs);
        }
        resid = resid.max(reflection_residual(tree, &s)).max(reflection_residual(tree, &sp));
    }
    Ok(LipschitzReport {
        pass,
        max_ratio,
        worst_reflection_residual: resid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::network::RootedTree;

    fn path4_tree() -> (Vec<f64>, RootedTree) {
        let net = instances::builtin("path4").unwrap().network;
        (net.lambda().to_vec(), RootedTree::new(&net, 3).unwrap())
    }

    #[test]
    fn zero_arrivals_leave_state() {
        let (_, tree) = path4_tree();
        let s = FluidState::new(&[1.0, 0.0, 2.0, 0.0]);
        let s1 = fluid_step(&tree, &s, &[0.0; 4]).unwrap();
        assert_eq!(s1.q, s.q);
        assert_eq!(s1.d, s.d);
    }

    #[test]
    fn unit_arrival_matches_child() {
        let (_, tree) = path4_tree();
        let s = FluidState::new(&[1.0, 0.0, 0.0, 0.0]);
        let s1 = fluid_step(&tree, &s, &[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(s1.q, vec![0.0; 4]);
        assert_eq!(s1.d[0], 1.0);
    }

    #[test]
    fn negative_arrival_rejected() {
        let (_, tree) = path4_tree();
        let s = FluidState::new(&[0.0; 4]);
        assert!(matches!(
            fluid_step(&tree, &s, &[0.0, -1.0, 0.0, 0.0]),
            Err(Error::NegativeArrival { index: 1, .. })
        ));
    }

    #[test]
    fn beta_at_zero_path4() {
        let (lambda, tree) = path4_tree();
        let r = beta(&tree, &lambda, &[0.0; 4]);
        // ε_1 = λ_1, ε_2 = λ_2 − λ_1, ε_3 = λ_3 − λ_2 + λ_1.
        let e1 = lambda[0];
        let e2 = lambda[1] - lambda[0];
        let e3 = lambda[2] - lambda[1] + lambda[0];
        assert_eq!(r.beta[0], 0.0);
        assert!((r.beta[1] - e1).abs() < 1e-15);
        assert!((r.beta[2] - e2).abs() < 1e-15);
        assert!((r.beta[3] - e3).abs() < 1e-15);
        assert!((r.f - (1.0 - lambda[3])).abs() < 1e-12);
    }

    #[test]
    fn fluid_from_zero_stays_empty() {
        let (lambda, tree) = path4_tree();
        let rep = fluid_drift_check(&tree, &lambda, 0.1, &[0.0; 4], 50).unwrap();
        assert!(rep.pass);
        assert!(rep.final_phi.abs() < 1e-12);
    }

    #[test]
    fn identical_arrivals_have_zero_gap() {
        let (lambda, tree) = path4_tree();
        let inc = vec![lambda.clone(); 20];
        let rep = lipschitz_check(&tree, &[1.0, 0.0, 2.0, 0.0], &inc, &inc).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.max_ratio, 0.0);
    }
}
