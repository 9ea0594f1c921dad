//! Dense two-phase simplex for small linear programs.
//!
//! Solves `min c'x  s.t.  A x <= b, x >= 0` on a full tableau. Sized for the
//! constrained l1 column solves of the precision module (a few hundred rows
//! and columns), with Dantzig pricing and a Bland fallback against cycling.

use crate::error::{DpqrError, Result};

/// `min objective . x` subject to `rows[i] . x <= rhs[i]` and `x >= 0`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Dual row prices `y` with the convention that the reduced cost of a
    /// column `(a, c)` is `c - y . a`; optimal bases satisfy `y . b =
    /// objective` and nonnegative reduced costs for every column.
    pub row_prices: Vec<f64>,
}

const EPS: f64 = 1e-9;

pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    let n = lp.objective.len();
    let m = lp.rows.len();
    if lp.rhs.len() != m {
        return Err(DpqrError::DimensionMismatch { expected: m, got: lp.rhs.len() });
    }
    for row in &lp.rows {
        if row.len() != n {
            return Err(DpqrError::DimensionMismatch { expected: n, got: row.len() });
        }
    }

    // Normalize to nonnegative rhs; slack +1 for kept rows, surplus -1 for
    // negated rows (those need an artificial basic variable).
    let mut need_artificial = Vec::new();
    let slack_start = n;
    let mut ncols = n + m;
    let mut tableau: Vec<Vec<f64>> = Vec::with_capacity(m);
    for i in 0..m {
        let flip = lp.rhs[i] < 0.0;
        let sign = if flip { -1.0 } else { 1.0 };
        let mut row = vec![0.0; ncols + 1];
        for j in 0..n {
            row[j] = sign * lp.rows[i][j];
        }
        row[slack_start + i] = sign;
        row[ncols] = sign * lp.rhs[i];
        if flip {
            need_artificial.push(i);
        }
        tableau.push(row);
    }
    let art_start = ncols;
    ncols += need_artificial.len();
    for row in &mut tableau {
        let rhs = row.pop().unwrap();
        row.resize(ncols, 0.0);
        row.push(rhs);
    }
    let mut basis: Vec<usize> = (0..m).map(|i| slack_start + i).collect();
    for (k, &i) in need_artificial.iter().enumerate() {
        tableau[i][art_start + k] = 1.0;
        basis[i] = art_start + k;
    }
    let mut banned = vec![false; ncols];

    // Phase 1: drive the artificials to zero.
    if !need_artificial.is_empty() {
        let mut cost = vec![0.0; ncols];
        for k in 0..need_artificial.len() {
            cost[art_start + k] = 1.0;
        }
        let (value, _) = run_simplex_with_z(&mut tableau, &mut basis, &cost, &banned)?;
        if value > 1e-7 {
            return Err(DpqrError::InfeasibleColumn { column: usize::MAX, gamma: f64::NAN });
        }
        // Ban artificials; pivot any still basic (at zero) out when possible.
        for j in art_start..ncols {
            banned[j] = true;
        }
        for i in 0..m {
            if basis[i] >= art_start {
                if let Some(j) = (0..art_start).find(|&j| !banned[j] && tableau[i][j].abs() > EPS)
                {
                    pivot(&mut tableau, &mut basis, i, j);
                }
            }
        }
    }

    // Phase 2: the real objective.
    let mut cost = vec![0.0; ncols];
    cost[..n].copy_from_slice(&lp.objective);
    let (value, z) = run_simplex_with_z(&mut tableau, &mut basis, &cost, &banned)?;

    let mut x = vec![0.0; n];
    for (i, &b) in basis.iter().enumerate() {
        if b < n {
            x[b] = tableau[i][ncols];
        }
    }
    // Recover duals from the slack reduced costs. The slack column of row i
    // is e_i in the unscaled system; row negation scales both the column and
    // the multiplier, so uniformly z_{slack_i} = -y_i.
    let row_prices = (0..m).map(|i| -z[slack_start + i]).collect();
    Ok(LpSolution { x, objective: value, row_prices })
}

/// Minimizes `cost . x` from the current basic feasible point. Returns the
/// optimal objective value and the final reduced-cost row.
fn run_simplex_with_z(
    tableau: &mut [Vec<f64>],
    basis: &mut [usize],
    cost: &[f64],
    banned: &[bool],
) -> Result<(f64, Vec<f64>)> {
    let m = tableau.len();
    let ncols = cost.len();
    // reduced costs z_j = c_j - c_B' B^-1 A_j
    let mut z: Vec<f64> = cost.to_vec();
    let mut obj = 0.0;
    for i in 0..m {
        let cb = cost[basis[i]];
        if cb != 0.0 {
            for j in 0..ncols {
                z[j] -= cb * tableau[i][j];
            }
            obj -= cb * tableau[i][ncols];
        }
    }

    let dantzig_cap = 50 * (m + ncols);
    let total_cap = 400 * (m + ncols);
    for iter in 0..total_cap {
        let entering = if iter < dantzig_cap {
            let mut best = None;
            let mut best_z = -EPS;
            for j in 0..ncols {
                if !banned[j] && z[j] < best_z {
                    best_z = z[j];
                    best = Some(j);
                }
            }
            best
        } else {
            (0..ncols).find(|&j| !banned[j] && z[j] < -EPS)
        };
        let Some(j) = entering else {
            return Ok((-obj, z));
        };

        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let a = tableau[i][j];
            if a > EPS {
                let ratio = tableau[i][ncols] / a;
                let better = match leave {
                    None => true,
                    Some((li, lr)) => {
                        ratio < lr - EPS || (ratio < lr + EPS && basis[i] < basis[li])
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let Some((i, _)) = leave else {
            return Err(DpqrError::UnboundedProgram);
        };

        pivot_with_z(tableau, basis, &mut z, &mut obj, i, j);
    }
    Err(DpqrError::EstimationAborted("simplex iteration cap exceeded".into()))
}

fn pivot(tableau: &mut [Vec<f64>], basis: &mut [usize], row: usize, col: usize) {
    let m = tableau.len();
    let ncols = tableau[0].len() - 1;
    let pv = tableau[row][col];
    for v in tableau[row].iter_mut() {
        *v /= pv;
    }
    for i in 0..m {
        if i != row {
            let f = tableau[i][col];
            if f != 0.0 {
                for j in 0..=ncols {
                    let t = tableau[row][j];
                    tableau[i][j] -= f * t;
                }
            }
        }
    }
    basis[row] = col;
}

fn pivot_with_z(
    tableau: &mut [Vec<f64>],
    basis: &mut [usize],
    z: &mut [f64],
    obj: &mut f64,
    row: usize,
    col: usize,
) {
    pivot(tableau, basis, row, col);
    let ncols = z.len();
    let f = z[col];
    if f != 0.0 {
        for j in 0..ncols {
            z[j] -= f * tableau[row][j];
        }
        *obj -= f * tableau[row][ncols];
    }
}
