//! Dense primal simplex for `max cᵀx  s.t.  Ax + s = b,  x, s ≥ 0` with `b ≥ 0`.
//!
//! The all-slack basis is feasible by assumption, so no phase one is needed.
//! Pivoting follows Bland's rule (smallest eligible index for both the
//! entering and the leaving variable), which rules out cycling.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-12;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    /// Structural variables.
    pub x: Vec<f64>,
    /// Slack per constraint row.
    pub slack: Vec<f64>,
    /// Basic variable per row: `j < x.len()` is structural, otherwise slack `j - x.len()`.
    pub basis: Vec<usize>,
    pub objective: f64,
    pub pivots: usize,
}

pub fn maximize(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpSolution> {
    let rows = a.len();
    let nv = c.len();
    let width = nv + rows;
    debug_assert!(b.iter().all(|&v| v >= 0.0), "right-hand side must be non-negative");

    let mut tab = vec![0.0; rows * width];
    let mut rhs = b.to_vec();
    for (i, row) in a.iter().enumerate() {
        tab[i * width..i * width + nv].copy_from_slice(row);
        tab[i * width + nv + i] = 1.0;
    }
    // Reduced costs for maximization: positive means improving.
    let mut cost = vec![0.0; width];
    cost[..nv].copy_from_slice(c);
    let mut objective = 0.0;
    let mut basis: Vec<usize> = (nv..width).collect();

    let mut pivots = 0;
    while let Some(enter) = (0..width).find(|&j| cost[j] > PIVOT_TOL) {
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..rows {
            let coef = tab[i * width + enter];
            if coef > PIVOT_TOL {
                let ratio = rhs[i] / coef;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((r, best)) => {
                        if ratio < best - PIVOT_TOL
                            || (ratio <= best + PIVOT_TOL && basis[i] < basis[r])
                        {
                            Some((i, ratio))
                        } else {
                            Some((r, best))
                        }
                    }
                };
            }
        }
        let Some((row, _)) = leave else {
            return Err(Error::Unbounded);
        };

        let pivot = tab[row * width + enter];
        for j in 0..width {
            tab[row * width + j] /= pivot;
        }
        rhs[row] /= pivot;
        for i in 0..rows {
            if i == row {
                continue;
            }
            let f = tab[i * width + enter];
            if f != 0.0 {
                for j in 0..width {
                    tab[i * width + j] -= f * tab[row * width + j];
                }
                rhs[i] -= f * rhs[row];
                if rhs[i] < 0.0 && rhs[i] > -1e-13 {
                    rhs[i] = 0.0;
                }
            }
        }
        let f = cost[enter];
        for j in 0..width {
            cost[j] -= f * tab[row * width + j];
        }
        objective += f * rhs[row];
        basis[row] = enter;

        pivots += 1;
        if pivots > MAX_PIVOTS {
            // Bland's rule terminates; this only guards against NaN input.
            return Err(Error::Unbounded);
        }
    }

    let mut x = vec![0.0; nv];
    let mut slack = vec![0.0; rows];
    for (i, &v) in basis.iter().enumerate() {
        if v < nv {
            x[v] = rhs[i];
        } else {
            slack[v - nv] = rhs[i];
        }
    }
    Ok(LpSolution {
        x,
        slack,
        basis,
        objective,
        pivots,
    })
}
