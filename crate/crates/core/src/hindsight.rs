//! Offline optimum: the best integer matching of the agents that have
//! arrived so far, over the full match set.

use crate::error::Result;
use crate::network::MatchingNetwork;
use crate::simplex;

const INT_TOL: f64 = 1e-7;
const BOUND_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct HindsightInstance {
    pub counts: Vec<u64>,
    pub rewards: Vec<f64>,
    pub matches: Vec<(usize, usize)>,
}

impl HindsightInstance {
    pub fn new(net: &MatchingNetwork, counts: &[u64]) -> Self {
        Self {
            counts: counts.to_vec(),
            rewards: net.rewards().to_vec(),
            matches: net.matches().to_vec(),
        }
    }

    fn n(&self) -> usize {
        self.counts.len()
    }

    pub fn is_feasible(&self, y: &[u64]) -> bool {
        let mut used = vec![0u64; self.n()];
        for (&(a, b), &v) in self.matches.iter().zip(y) {
            used[a] += v;
            used[b] += v;
        }
        used.iter().zip(&self.counts).all(|(u, c)| u <= c)
    }

    pub fn value_of(&self, y: &[u64]) -> f64 {
        self.rewards.iter().zip(y).map(|(r, &v)| r * v as f64).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HindsightSolution {
    pub value: f64,
    pub y: Vec<u64>,
    /// LP relaxations solved (1 when the root relaxation is integral).
    pub nodes: usize,
}

/// LP relaxation of the instance with `lo ≤ y ≤ hi`; returns the objective
/// and the optimal point, or `None` when infeasible.
fn relaxation(inst: &HindsightInstance, lo: &[u64], hi: &[Option<u64>]) -> Result<Option<(f64, Vec<f64>)>> {
    let n = inst.n();
    let k = inst.matches.len();
    let mut rhs: Vec<f64> = inst.counts.iter().map(|&c| c as f64).collect();
    for (&(a, b), &l) in inst.matches.iter().zip(lo) {
        rhs[a] -= l as f64;
        rhs[b] -= l as f64;
    }
    if rhs.iter().any(|&v| v < 0.0) {
        return Ok(None);
    }
    let mut rows: Vec<Vec<f64>> = vec![vec![0.0; k]; n];
    for (m, &(a, b)) in inst.matches.iter().enumerate() {
        rows[a][m] = 1.0;
        rows[b][m] = 1.0;
    }
    for m in 0..k {
        if let Some(h) = hi[m] {
            if h < lo[m] {
                return Ok(None);
            }
            let mut row = vec![0.0; k];
            row[m] = 1.0;
            rows.push(row);
            rhs.push((h - lo[m]) as f64);
        }
    }
    let lp = simplex::maximize(&inst.rewards, &rows, &rhs)?;
    let x: Vec<f64> = lp.x.iter().zip(lo).map(|(v, &l)| v + l as f64).collect();
    let base: f64 = inst.rewards.iter().zip(lo).map(|(r, &l)| r * l as f64).sum();
    Ok(Some((lp.objective + base, x)))
}

fn as_integral(inst: &HindsightInstance, x: &[f64]) -> Option<Vec<u64>> {
    let y: Option<Vec<u64>> = x
        .iter()
        .map(|&v| {
            let r = v.round();
            ((v - r).abs() <= INT_TOL && r >= 0.0).then_some(r as u64)
        })
        .collect();
    y.filter(|y| inst.is_feasible(y))
}

/// Exact optimum of `max rᵀy  s.t.  M y ≤ counts, y ∈ ℤ≥0`.
pub fn optimal_value(inst: &HindsightInstance) -> Result<HindsightSolution> {
    let k = inst.matches.len();
    let mut best = HindsightSolution {
        value: 0.0,
        y: vec![0; k],
        nodes: 0,
    };
    let mut stack: Vec<(Vec<u64>, Vec<Option<u64>>)> = vec![(vec![0; k], vec![None; k])];
    while let Some((lo, hi)) = stack.pop() {
        best.nodes += 1;
        let Some((bound, x)) = relaxation(inst, &lo, &hi)? else {
            continue;
        };
        if bound <= best.value + BOUND_TOL {
            continue;
        }
        if let Some(y) = as_integral(inst, &x) {
            let value = inst.value_of(&y);
            if value > best.value {
                best.value = value;
                best.y = y;
            }
            continue;
        }
        // Most fractional coordinate.
        let (m, v) = x
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| {
                let fa = (a.1 - a.1.floor() - 0.5).abs();
                let fb = (b.1 - b.1.floor() - 0.5).abs();
                fb.total_cmp(&fa).then(b.0.cmp(&a.0))
            })
            .expect("at least one match");
        let down = v.floor() as u64;
        let mut hi_down = hi.clone();
        hi_down[m] = Some(down);
        let mut lo_up = lo.clone();
        lo_up[m] = down + 1;
        // Depth first; the up branch is explored first.
        stack.push((lo, hi_down));
        stack.push((lo_up, hi));
    }
    Ok(best)
}

/// Reusable solver bound to one network.
#[derive(Debug, Clone)]
pub struct HindsightSolver {
    rewards: Vec<f64>,
    matches: Vec<(usize, usize)>,
}

impl HindsightSolver {
    pub fn new(net: &MatchingNetwork) -> Self {
        Self {
            rewards: net.rewards().to_vec(),
            matches: net.matches().to_vec(),
        }
    }

    pub fn value(&self, counts: &[u64]) -> Result<f64> {
        if counts.iter().all(|&c| c == 0) {
            return Ok(0.0);
        }
        let inst = HindsightInstance {
            counts: counts.to_vec(),
            rewards: self.rewards.clone(),
            matches: self.matches.clone(),
        };
        Ok(optimal_value(&inst)?.value)
    }
}

/// Offline optimum at each checkpoint, given the cumulative arrival counts
/// recorded there.
pub fn hindsight_curve(net: &MatchingNetwork, counts_at_checkpoints: &[Vec<u64>]) -> Result<Vec<f64>> {
    let solver = HindsightSolver::new(net);
    counts_at_checkpoints.iter().map(|c| solver.value(c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn empty_market() {
        let net = instances::builtin("cycle5").unwrap().network;
        let s = optimal_value(&HindsightInstance::new(&net, &[0; 5])).unwrap();
        assert_eq!(s.value, 0.0);
        assert_eq!(s.y, vec![0; 5]);
    }

    #[test]
    fn path4_single_agents() {
        let net = instances::path(&[0.25; 4], &[2.0, 3.0, 1.0]).unwrap();
        let s = optimal_value(&HindsightInstance::new(&net, &[1, 1, 1, 0])).unwrap();
        assert_eq!(s.value, 3.0);
    }

    #[test]
    fn odd_cycle_needs_branching() {
        // Triangle with one agent each: LP gives 1.5, integer optimum 1.
        let net = MatchingNetwork::validate(&crate::network::RawNetwork {
            n: 3,
            matches: vec![[0, 1], [1, 2], [0, 2]],
            lambda: vec![1.0 / 3.0; 3],
            rewards: vec![1.0; 3],
        })
        .unwrap();
        let s = optimal_value(&HindsightInstance::new(&net, &[1, 1, 1])).unwrap();
        assert_eq!(s.value, 1.0);
        assert!(s.nodes > 1);
    }

    #[test]
    fn curve_is_monotone() {
        let net = instances::builtin("cycle5").unwrap().network;
        let counts = vec![vec![0; 5], vec![1, 0, 1, 0, 0], vec![2, 1, 1, 1, 1], vec![3, 2, 4, 1, 1]];
        let c = hindsight_curve(&net, &counts).unwrap();
        assert!(c.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(c[0], 0.0);
    }
}
