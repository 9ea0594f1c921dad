//! Noisy pseudo precision-matrix estimation.
//!
//! The central shard's kernel-weighted covariance gets symmetric Gaussian
//! noise, then an approximate inverse is assembled from independent
//! constrained-l1 column solves `min |w|_1 s.t. |D w - e_j|_inf <= gamma`
//! and symmetrized by averaging with its transpose.

use crate::budget::{BudgetLedger, PrivacyBudget, Share};
use crate::data::Shard;
use crate::error::{DpqrError, Result};
use crate::kernel::KernelSpec;
use crate::lp::{solve, LinearProgram};
use crate::sampling::RngStream;
use ndarray::Array2;
use rayon::prelude::*;

/// Kernel-weighted local covariance plus its privacy noise parameters.
#[derive(Debug, Clone)]
pub struct NoisyCovariance {
    pub matrix: Array2<f64>,
    pub noise_sigma: f64,
    pub bandwidth: f64,
}

/// Per-entry noise variance `B1 log^2(2 n p^2) kappa_u^2 log(1.25/delta) / (n eps)^2`.
pub fn covariance_noise_variance(
    n: usize,
    p: usize,
    kappa_u: f64,
    budget: PrivacyBudget,
    b1: f64,
) -> Result<f64> {
    if budget.delta == 0.0 {
        return Err(DpqrError::GaussianNeedsDelta);
    }
    let log_term = (2.0 * n as f64 * (p as f64).powi(2)).ln();
    Ok(b1 * log_term.powi(2) * kappa_u.powi(2) * (1.25 / budget.delta).ln()
        / (n as f64 * budget.epsilon).powi(2))
}

/// Builds the kernel-weighted covariance at `beta_prev` on the central shard
/// and privatizes it with mirrored Gaussian noise on the upper triangle.
/// With `dp_enabled = false` the exact covariance is returned and nothing is
/// charged to the ledger.
#[allow(clippy::too_many_arguments)]
pub fn noisy_pseudo_covariance(
    central: &Shard,
    beta_prev: &[f64],
    kernel: &KernelSpec,
    budget: PrivacyBudget,
    b1: f64,
    dp_enabled: bool,
    rng: &mut RngStream,
    ledger: Option<&BudgetLedger>,
) -> Result<NoisyCovariance> {
    if central.is_empty() {
        return Err(DpqrError::RejectedInput("empty central shard".into()));
    }
    let dim = central.dim();
    if beta_prev.len() != dim {
        return Err(DpqrError::DimensionMismatch { expected: dim, got: beta_prev.len() });
    }
    let n = central.len();
    let mut d = Array2::<f64>::zeros((dim, dim));
    for i in 0..n {
        let (x, y) = central.row(i);
        let mut xb = 0.0;
        for (xi, bi) in x.iter().zip(beta_prev) {
            xb += xi * bi;
        }
        // raw rescaled kernel weight, no floor: the covariance never divides
        let w = kernel.family.density((y - xb) / kernel.bandwidth) / kernel.bandwidth;
        if w == 0.0 {
            continue;
        }
        for r in 0..dim {
            let wr = w * x[r];
            for c in r..dim {
                d[(r, c)] += wr * x[c];
            }
        }
    }
    let nf = n as f64;
    for r in 0..dim {
        for c in r..dim {
            d[(r, c)] /= nf;
            d[(c, r)] = d[(r, c)];
        }
    }

    let mut noise_sigma = 0.0;
    if dp_enabled {
        let var = covariance_noise_variance(n, central.dim() - 1, kernel.kappa_u, budget, b1)?;
        noise_sigma = var.sqrt();
        for r in 0..dim {
            for c in r..dim {
                let g = rng.normal(noise_sigma);
                d[(r, c)] += g;
                if c != r {
                    d[(c, r)] = d[(r, c)];
                }
            }
        }
        if let Some(ledger) = ledger {
            ledger.charge("precision/covariance", Share::new(1, 1));
        }
    }
    Ok(NoisyCovariance { matrix: d, noise_sigma, bandwidth: kernel.bandwidth })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClimeObjective {
    /// Column-wise l1 norm, the standard constrained-inverse objective.
    L1,
    /// Column-wise sup norm, kept switchable for fidelity experiments.
    LInf,
}

/// Symmetric approximate inverse with its constraint slack.
#[derive(Debug, Clone)]
pub struct PrecisionEstimate {
    pub w: Array2<f64>,
    pub gamma: f64,
    /// Max violation of `|D w_j - e_j|_inf` over the raw column solutions.
    pub column_violation: f64,
    /// Max violation recomputed after symmetrization.
    pub symmetrized_violation: f64,
}

impl PrecisionEstimate {
    pub fn row(&self, j: usize) -> Vec<f64> {
        self.w.row(j).to_vec()
    }
}

/// Raw per-column solutions of `min |w| s.t. |D w - e_j|_inf <= gamma`,
/// solved independently and in parallel. An infeasible column reports which
/// one, so the caller can enlarge gamma.
pub fn clime_columns(
    d: &Array2<f64>,
    gamma: f64,
    objective: ClimeObjective,
) -> Result<Vec<Vec<f64>>> {
    let dim = d.nrows();
    if d.ncols() != dim {
        return Err(DpqrError::DimensionMismatch { expected: dim, got: d.ncols() });
    }
    if !(gamma > 0.0) {
        return Err(DpqrError::InvalidParameter(format!("gamma must be positive, got {gamma}")));
    }
    (0..dim)
        .into_par_iter()
        .map(|j| {
            clime_column(d, j, gamma, objective).map_err(|e| match e {
                DpqrError::InfeasibleColumn { .. } => DpqrError::InfeasibleColumn { column: j, gamma },
                other => other,
            })
        })
        .collect()
}

/// Solves the constrained-l1 program per column and assembles the
/// symmetrized estimate.
pub fn clime_solve(
    d: &Array2<f64>,
    gamma: f64,
    objective: ClimeObjective,
) -> Result<PrecisionEstimate> {
    let dim = d.nrows();
    let columns = clime_columns(d, gamma, objective)?;
    let mut w = Array2::<f64>::zeros((dim, dim));
    for (j, col) in columns.into_iter().enumerate() {
        for (i, v) in col.into_iter().enumerate() {
            // column solution j becomes row j; D is symmetric so the row
            // and column formulations of the constraint coincide
            w[(j, i)] = v;
        }
    }

    let column_violation = max_violation(&w, d);
    let wt = w.t().to_owned();
    let w_sym = (&w + &wt) * 0.5;
    let symmetrized_violation = max_violation(&w_sym, d);
    Ok(PrecisionEstimate { w: w_sym, gamma, column_violation, symmetrized_violation })
}

/// `max_jk |(W D - I)_{jk}|`.
pub fn max_violation(w: &Array2<f64>, d: &Array2<f64>) -> f64 {
    let prod = w.dot(d);
    let dim = w.nrows();
    let mut worst = 0.0f64;
    for j in 0..dim {
        for k in 0..dim {
            let target = if j == k { 1.0 } else { 0.0 };
            worst = worst.max((prod[(j, k)] - target).abs());
        }
    }
    worst
}

/// One column solve: `min |w| s.t. |D w - e_j|_inf <= gamma`.
fn clime_column(
    d: &Array2<f64>,
    j: usize,
    gamma: f64,
    objective: ClimeObjective,
) -> Result<Vec<f64>> {
    match objective {
        ClimeObjective::L1 => clime_column_working_set(d, j, gamma),
        ClimeObjective::LInf => clime_column_full(d, j, gamma, objective),
    }
}

/// Column generation for the l1 objective: solve on a small coordinate set,
/// then let the dual prices admit any coordinate whose reduced cost
/// `1 - |(D t)_k|` is negative. Exact at termination; falls back to the full
/// program if the active set fails to settle.
fn clime_column_working_set(d: &Array2<f64>, j: usize, gamma: f64) -> Result<Vec<f64>> {
    let dim = d.nrows();
    if dim <= 24 {
        return clime_column_full(d, j, gamma, ClimeObjective::L1);
    }
    // candidate ranking by coupling with the target column
    let mut ranked: Vec<usize> = (0..dim).collect();
    ranked.sort_by(|&a, &b| d[(j, b)].abs().partial_cmp(&d[(j, a)].abs()).unwrap().then(a.cmp(&b)));
    let mut in_set = vec![false; dim];
    let mut set: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut grow = |set: &mut Vec<usize>, in_set: &mut Vec<bool>, cursor: &mut usize, count: usize| {
        let mut added = 0;
        while added < count && *cursor < dim {
            let k = ranked[*cursor];
            *cursor += 1;
            if !in_set[k] {
                in_set[k] = true;
                set.push(k);
                added += 1;
            }
        }
        added
    };
    grow(&mut set, &mut in_set, &mut cursor, 12);
    if !in_set[j] {
        in_set[j] = true;
        set.push(j);
    }

    for _round in 0..64 {
        match solve(&restricted_l1_program(d, j, gamma, &set)) {
            Ok(sol) => {
                // admission prices over all coordinates
                let s = set.len();
                let mut t = vec![0.0; dim];
                for r in 0..dim {
                    t[r] = sol.row_prices[2 * r] - sol.row_prices[2 * r + 1];
                }
                let mut violated = Vec::new();
                for k in 0..dim {
                    if in_set[k] {
                        continue;
                    }
                    let mut dt = 0.0;
                    for r in 0..dim {
                        dt += d[(r, k)] * t[r];
                    }
                    if dt.abs() > 1.0 + 1e-7 {
                        violated.push(k);
                    }
                }
                if violated.is_empty() {
                    let mut w = vec![0.0; dim];
                    for (idx, &k) in set.iter().enumerate() {
                        w[k] = sol.x[idx] - sol.x[s + idx];
                    }
                    return Ok(w);
                }
                for k in violated {
                    in_set[k] = true;
                    set.push(k);
                }
            }
            Err(DpqrError::InfeasibleColumn { .. }) => {
                // a richer coordinate set can restore feasibility
                let want = set.len();
                if grow(&mut set, &mut in_set, &mut cursor, want) == 0 {
                    return Err(DpqrError::InfeasibleColumn { column: j, gamma });
                }
            }
            Err(other) => return Err(other),
        }
    }
    clime_column_full(d, j, gamma, ClimeObjective::L1)
}

fn restricted_l1_program(d: &Array2<f64>, j: usize, gamma: f64, set: &[usize]) -> LinearProgram {
    let dim = d.nrows();
    let s = set.len();
    let nvars = 2 * s;
    let mut rows = Vec::with_capacity(2 * dim);
    let mut rhs = Vec::with_capacity(2 * dim);
    for r in 0..dim {
        let e = if r == j { 1.0 } else { 0.0 };
        let mut upper = vec![0.0; nvars];
        let mut lower = vec![0.0; nvars];
        for (idx, &k) in set.iter().enumerate() {
            upper[idx] = d[(r, k)];
            upper[s + idx] = -d[(r, k)];
            lower[idx] = -d[(r, k)];
            lower[s + idx] = d[(r, k)];
        }
        rows.push(upper);
        rhs.push(gamma + e);
        rows.push(lower);
        rhs.push(gamma - e);
    }
    LinearProgram { objective: vec![1.0; nvars], rows, rhs }
}

/// Dense formulation over every coordinate, `w = u - v`.
fn clime_column_full(
    d: &Array2<f64>,
    j: usize,
    gamma: f64,
    objective: ClimeObjective,
) -> Result<Vec<f64>> {
    let dim = d.nrows();
    let nvars = match objective {
        ClimeObjective::L1 => 2 * dim,
        ClimeObjective::LInf => 2 * dim + 1,
    };
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(2 * dim + 2 * dim);
    let mut rhs: Vec<f64> = Vec::with_capacity(2 * dim + 2 * dim);
    for r in 0..dim {
        let e = if r == j { 1.0 } else { 0.0 };
        // D w - e <= gamma
        let mut upper = vec![0.0; nvars];
        // -(D w - e) <= gamma
        let mut lower = vec![0.0; nvars];
        for c in 0..dim {
            upper[c] = d[(r, c)];
            upper[dim + c] = -d[(r, c)];
            lower[c] = -d[(r, c)];
            lower[dim + c] = d[(r, c)];
        }
        rows.push(upper);
        rhs.push(gamma + e);
        rows.push(lower);
        rhs.push(gamma - e);
    }
    let objective_vec = match objective {
        ClimeObjective::L1 => {
            let mut c = vec![1.0; 2 * dim];
            c.resize(nvars, 0.0);
            c
        }
        ClimeObjective::LInf => {
            // |u_k - v_k| <= t for each k
            for k in 0..dim {
                let mut a = vec![0.0; nvars];
                a[k] = 1.0;
                a[dim + k] = -1.0;
                a[2 * dim] = -1.0;
                rows.push(a);
                rhs.push(0.0);
                let mut b = vec![0.0; nvars];
                b[k] = -1.0;
                b[dim + k] = 1.0;
                b[2 * dim] = -1.0;
                rows.push(b);
                rhs.push(0.0);
            }
            let mut c = vec![0.0; nvars];
            c[2 * dim] = 1.0;
            c
        }
    };
    let lp = LinearProgram { objective: objective_vec, rows, rhs };
    let sol = solve(&lp).map_err(|e| match e {
        DpqrError::InfeasibleColumn { .. } => DpqrError::InfeasibleColumn { column: j, gamma },
        other => other,
    })?;
    Ok((0..dim).map(|k| sol.x[k] - sol.x[dim + k]).collect())
}

/// Default constraint slack
/// `c_gamma (sqrt(log p/(n b)) + log p/(n b) + b^2 + privacy)` with privacy
/// term `sqrt(log^{10/3} p log(1/delta) n^{2/3} / (N eps)^2)`. A default
/// only; callers may always override.
#[allow(clippy::too_many_arguments)]
pub fn choose_gamma(
    n: usize,
    n_total: usize,
    p: usize,
    b: f64,
    budget: Option<PrivacyBudget>,
    c_gamma: f64,
) -> f64 {
    let logp = (p.max(2) as f64).ln();
    let nf = n as f64;
    let kernel_term = (logp / (nf * b)).sqrt() + logp / (nf * b) + b * b;
    let privacy_term = match budget {
        Some(budget) if budget.delta > 0.0 => {
            let num = logp.powf(10.0 / 3.0) * (1.0 / budget.delta).ln() * nf.powf(2.0 / 3.0);
            (num / (n_total as f64 * budget.epsilon).powi(2)).sqrt()
        }
        _ => 0.0,
    };
    c_gamma * (kernel_term + privacy_term)
}
