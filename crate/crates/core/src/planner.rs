//! Static planning problem: `max rᵀz  s.t.  Mz + s = λ,  z, s ≥ 0`.
//!
//! [`solve_spp`] returns the basic optimal solution reached by Bland's rule
//! from the all-slack basis, together with the demand partition and the
//! general-position-gap parameter ε. [`BasisResolver`] re-solves the same
//! basis for perturbed arrival rates, which is what probabilistic matching
//! needs every period.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, RwLock};

use serde::Serialize;

use crate::error::{Error, Result, Variable};
use crate::linalg::Lu;
use crate::network::{MatchingNetwork, RootedTree};
use crate::simplex;

const BASIC_TOL: f64 = 1e-9;
const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Serialize)]
pub struct SppSolution {
    pub z_star: Vec<f64>,
    pub s_star: Vec<f64>,
    /// Basic variables, matches first then slacks, each in ascending index.
    pub basis: Vec<Variable>,
    pub epsilon: f64,
    pub objective: f64,
    pub active_matches: Vec<usize>,
    pub redundant_matches: Vec<usize>,
    pub under_demanded: Vec<usize>,
    pub over_demanded: Vec<usize>,
    /// Per-type ε_i; only defined when the reduced network is a forest with one
    /// under-demanded type per component.
    pub epsilon_i: Option<Vec<f64>>,
    pub pivots: usize,
}

impl SppSolution {
    pub fn is_under_demanded(&self, i: usize) -> bool {
        self.s_star[i] > 0.0
    }

    /// Per-type truncation flags (true on 𝒜₊).
    pub fn truncation(&self) -> Vec<bool> {
        self.s_star.iter().map(|&s| s > 0.0).collect()
    }

    /// The network restricted to active matches, with the map from reduced
    /// match index to original match index.
    pub fn reduced_network(&self, net: &MatchingNetwork) -> (MatchingNetwork, Vec<usize>) {
        net.restrict(&self.active_matches)
    }

    /// Roots the reduced network at its unique under-demanded type.
    pub fn rooted_tree(&self, net: &MatchingNetwork) -> Result<(MatchingNetwork, RootedTree)> {
        let (reduced, _) = self.reduced_network(net);
        if !reduced.is_acyclic() {
            return Err(Error::NotAcyclic);
        }
        if !reduced.is_connected() || self.under_demanded.len() != 1 {
            return Err(Error::BadRoot(format!(
                "reduced network must be connected with one under-demanded type (found {:?})",
                self.under_demanded
            )));
        }
        let tree = RootedTree::new(&reduced, self.under_demanded[0])?;
        Ok((reduced, tree))
    }
}

fn column(net: &MatchingNetwork, v: Variable) -> Vec<f64> {
    let mut col = vec![0.0; net.n()];
    match v {
        Variable::Match(m) => {
            let (i, j) = net.matches()[m];
            col[i] = 1.0;
            col[j] = 1.0;
        }
        Variable::Slack(i) => col[i] = 1.0,
    }
    col
}

fn basis_matrix(net: &MatchingNetwork, basis: &[Variable]) -> Vec<Vec<f64>> {
    let n = net.n();
    let cols: Vec<Vec<f64>> = basis.iter().map(|&v| column(net, v)).collect();
    (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
}

pub fn solve_spp(net: &MatchingNetwork) -> Result<SppSolution> {
    let n = net.n();
    let k = net.num_matches();
    let mut a = vec![vec![0.0; k]; n];
    for (m, &(i, j)) in net.matches().iter().enumerate() {
        a[i][m] = 1.0;
        a[j][m] = 1.0;
    }
    let lp = simplex::maximize(net.rewards(), &a, net.lambda())?;

    let mut basis: Vec<Variable> = lp
        .basis
        .iter()
        .map(|&v| if v < k { Variable::Match(v) } else { Variable::Slack(v - k) })
        .collect();
    basis.sort_by_key(|v| match *v {
        Variable::Match(m) => m,
        Variable::Slack(i) => k + i,
    });

    let lu = Lu::factor(&basis_matrix(net, &basis)).ok_or(Error::NumericalInstability {
        condition: f64::INFINITY,
    })?;
    let condition = lu.condition();
    if condition > CONDITION_LIMIT {
        return Err(Error::NumericalInstability { condition });
    }
    let values = lu.solve(net.lambda());

    let mut z_star = vec![0.0; k];
    let mut s_star = vec![0.0; n];
    for (&v, &x) in basis.iter().zip(&values) {
        if x <= BASIC_TOL {
            return Err(Error::GpgViolation { variable: v, value: x });
        }
        match v {
            Variable::Match(m) => z_star[m] = x,
            Variable::Slack(i) => s_star[i] = x,
        }
    }
    let epsilon = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let objective = z_star.iter().zip(net.rewards()).map(|(z, r)| z * r).sum();

    let active_matches: Vec<usize> = (0..k).filter(|&m| z_star[m] > 0.0).collect();
    let redundant_matches: Vec<usize> = (0..k).filter(|&m| z_star[m] == 0.0).collect();
    let under_demanded: Vec<usize> = (0..n).filter(|&i| s_star[i] > 0.0).collect();
    let over_demanded: Vec<usize> = (0..n).filter(|&i| s_star[i] == 0.0).collect();

    let mut sol = SppSolution {
        z_star,
        s_star,
        basis,
        epsilon,
        objective,
        active_matches,
        redundant_matches,
        under_demanded,
        over_demanded,
        epsilon_i: None,
        pivots: lp.pivots,
    };
    sol.epsilon_i = forest_epsilons(net, &sol);
    Ok(sol)
}

/// ε_i from the solution itself: z* on the parent edge for over-demanded
/// types, s* for under-demanded ones. Parents come from a multi-source BFS
/// over the reduced network started at the under-demanded types.
fn forest_epsilons(net: &MatchingNetwork, sol: &SppSolution) -> Option<Vec<f64>> {
    let (reduced, map) = sol.reduced_network(net);
    if !reduced.is_acyclic() {
        return None;
    }
    let n = net.n();
    let (label, count) = reduced.component_labels();
    let mut roots_per_component = vec![0usize; count];
    for &r in &sol.under_demanded {
        roots_per_component[label[r]] += 1;
    }
    if roots_per_component.iter().any(|&c| c != 1) {
        return None;
    }
    let mut eps = vec![f64::NAN; n];
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();
    for &r in &sol.under_demanded {
        eps[r] = sol.s_star[r];
        seen[r] = true;
        queue.push_back(r);
    }
    while let Some(u) = queue.pop_front() {
        for &(v, m) in reduced.neighbors(u) {
            if !seen[v] {
                seen[v] = true;
                eps[v] = sol.z_star[map[m]];
                queue.push_back(v);
            }
        }
    }
    Some(eps)
}

/// Arrival rates moved toward the degenerate boundary of the optimal basis.
///
/// With `x*` the basic solution and `x₀` the same vector with its smallest
/// entry zeroed, returns the instance with `λ ∝ M_B ((1 − θ) x₀ + θ x*)`
/// (renormalized). For `θ ∈ (0, 1]` the basis stays optimal and its gap
/// scales linearly with `θ`.
pub fn toward_degeneracy(net: &MatchingNetwork, spp: &SppSolution, theta: f64) -> Result<MatchingNetwork> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::config("sweep", format!("epsilon_scale {theta} must lie in (0, 1]")));
    }
    let value = |v: Variable| match v {
        Variable::Match(m) => spp.z_star[m],
        Variable::Slack(i) => spp.s_star[i],
    };
    let smallest = spp
        .basis
        .iter()
        .copied()
        .min_by(|a, b| value(*a).total_cmp(&value(*b)))
        .expect("non-empty basis");
    let mut lambda = vec![0.0; net.n()];
    for &v in &spp.basis {
        let x = if v == smallest { theta * value(v) } else { value(v) };
        for (l, c) in lambda.iter_mut().zip(column(net, v)) {
            *l += x * c;
        }
    }
    let total: f64 = lambda.iter().sum();
    lambda.iter_mut().for_each(|l| *l /= total);
    let fix = 1.0 - lambda.iter().sum::<f64>();
    let big = (0..lambda.len()).max_by(|&a, &b| lambda[a].total_cmp(&lambda[b])).unwrap_or(0);
    lambda[big] += fix;
    let mut raw = net.to_raw();
    raw.lambda = lambda;
    MatchingNetwork::validate(&raw)
}

/// ε_i as alternating sums of λ over each subtree 𝒯(i). At the root this
/// equals the under-demanded slack.
pub fn tree_epsilons(net: &MatchingNetwork, tree: &RootedTree) -> Vec<f64> {
    let lambda = net.lambda();
    (0..tree.n())
        .map(|i| {
            tree.subtree(i)
                .into_iter()
                .map(|j| {
                    if tree.descendant_distance(i, j) % 2 == 0 {
                        lambda[j]
                    } else {
                        -lambda[j]
                    }
                })
                .sum()
        })
        .collect()
}

/// Solution of the fixed-basis system for one availability pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub z: Vec<f64>,
    pub s: Vec<f64>,
}

/// Re-solves `M_B x = λ̃` for `λ̃ = λ + (ε/n)·1{non-empty}` with a fixed basis.
///
/// Results are memoized per availability pattern; the cache is shared behind
/// a lock so one resolver can serve concurrent replications.
#[derive(Debug)]
pub struct BasisResolver {
    lu: Lu,
    basis: Vec<Variable>,
    lambda: Vec<f64>,
    epsilon: f64,
    num_matches: usize,
    cache: RwLock<HashMap<Vec<u64>, Arc<Resolved>>>,
}

impl BasisResolver {
    pub fn new(net: &MatchingNetwork, spp: &SppSolution) -> Result<Self> {
        let lu = Lu::factor(&basis_matrix(net, &spp.basis)).ok_or(Error::NumericalInstability {
            condition: f64::INFINITY,
        })?;
        Ok(Self {
            lu,
            basis: spp.basis.clone(),
            lambda: net.lambda().to_vec(),
            epsilon: spp.epsilon,
            num_matches: net.num_matches(),
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn cached_patterns(&self) -> usize {
        self.cache.read().map(|c| c.len()).unwrap_or(0)
    }

    /// `availability[i]` is true when queue `i` is non-empty.
    pub fn resolve_with_basis(&self, availability: &[bool]) -> Result<Arc<Resolved>> {
        let key = pack(availability);
        if let Some(hit) = self.cache.read().ok().and_then(|c| c.get(&key).cloned()) {
            return Ok(hit);
        }
        let n = self.lambda.len();
        let shift = self.epsilon / n as f64;
        let rhs: Vec<f64> = self
            .lambda
            .iter()
            .zip(availability)
            .map(|(&l, &a)| if a { l + shift } else { l })
            .collect();
        let values = self.lu.solve(&rhs);
        let mut z = vec![0.0; self.num_matches];
        let mut s = vec![0.0; n];
        for (&v, &x) in self.basis.iter().zip(&values) {
            if !(x > 0.0) {
                return Err(Error::BasisInfeasible { variable: v, value: x });
            }
            match v {
                Variable::Match(m) => z[m] = x,
                Variable::Slack(i) => s[i] = x,
            }
        }
        let resolved = Arc::new(Resolved { z, s });
        if let Ok(mut cache) = self.cache.write() {
            // Another thread may have inserted the same pattern; keep the first.
            return Ok(cache.entry(key).or_insert(resolved).clone());
        }
        Ok(resolved)
    }
}

fn pack(bits: &[bool]) -> Vec<u64> {
    let mut out = vec![0u64; bits.len().div_ceil(64)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 64] |= 1 << (i % 64);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    fn path4(lambda: [f64; 4]) -> MatchingNetwork {
        let sum: f64 = lambda.iter().sum();
        instances::path(&lambda.map(|l| l / sum), &[3.0, 2.0, 1.0]).unwrap()
    }

    #[test]
    fn path4_chain_solution() {
        let net = path4([1.0, 2.0, 3.5, 4.5]);
        let l = net.lambda().to_vec();
        let sol = solve_spp(&net).unwrap();
        let expect = [l[0], l[1] - l[0], l[2] - l[1] + l[0]];
        for (z, e) in sol.z_star.iter().zip(expect) {
            assert!((z - e).abs() < 1e-12);
        }
        assert!((sol.s_star[3] - (l[3] - l[2] + l[1] - l[0])).abs() < 1e-12);
        assert_eq!(sol.under_demanded, vec![3]);
    }

    #[test]
    fn feasibility_holds_per_row() {
        let net = instances::builtin("cycle5").unwrap().network;
        let sol = solve_spp(&net).unwrap();
        let mut row = sol.s_star.clone();
        for (m, &(i, j)) in net.matches().iter().enumerate() {
            row[i] += sol.z_star[m];
            row[j] += sol.z_star[m];
        }
        for (r, l) in row.iter().zip(net.lambda()) {
            assert!((r - l).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_instance_reports_gpg_violation() {
        // λ = (1, 2, 1)/4 on a path: z = (1/4, 1/4) with zero slack at the
        // middle, but the basis needs a third variable which sits at zero.
        let net = instances::path(&[0.25, 0.5, 0.25], &[1.0, 1.0]).unwrap();
        match solve_spp(&net) {
            Err(Error::GpgViolation { value, .. }) => assert!(value.abs() <= 1e-9),
            other => panic!("expected GPG violation, got {other:?}"),
        }
    }

    #[test]
    fn resolve_identity_pattern_reproduces_optimum() {
        let net = path4([1.0, 2.0, 3.5, 4.5]);
        let sol = solve_spp(&net).unwrap();
        let resolver = BasisResolver::new(&net, &sol).unwrap();
        let r = resolver.resolve_with_basis(&[false; 4]).unwrap();
        for (a, b) in r.z.iter().zip(&sol.z_star) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in r.s.iter().zip(&sol.s_star) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn resolve_single_leaf_shift() {
        let net = path4([1.0, 2.0, 3.5, 4.5]);
        let l = net.lambda().to_vec();
        let sol = solve_spp(&net).unwrap();
        let e = sol.epsilon / 4.0;
        let resolver = BasisResolver::new(&net, &sol).unwrap();
        let r = resolver.resolve_with_basis(&[true, false, false, false]).unwrap();
        // Forward substitution along the chain with λ₁ replaced by λ₁ + ε/4.
        let expect = [l[0] + e, l[1] - l[0] - e, l[2] - l[1] + l[0] + e];
        for (z, x) in r.z.iter().zip(expect) {
            assert!((z - x).abs() < 1e-12);
        }
        assert!((r.s[3] - (sol.s_star[3] - e)).abs() < 1e-12);
    }

    #[test]
    fn resolve_is_memoized() {
        let net = path4([1.0, 2.0, 3.5, 4.5]);
        let sol = solve_spp(&net).unwrap();
        let resolver = BasisResolver::new(&net, &sol).unwrap();
        let a = resolver.resolve_with_basis(&[true; 4]).unwrap();
        let b = resolver.resolve_with_basis(&[true; 4]).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(resolver.cached_patterns(), 1);
    }

    #[test]
    fn tree_epsilons_leaf_is_lambda() {
        let net = path4([1.0, 2.0, 3.5, 4.5]);
        let tree = RootedTree::new(&net, 3).unwrap();
        let eps = tree_epsilons(&net, &tree);
        assert_eq!(eps[0], net.lambda()[0]);
        let l = net.lambda();
        assert!((eps[2] - (l[2] - l[1] + l[0])).abs() < 1e-15);
    }
}
