//! Simulated trusted-coordinator runtime for the iterative privatized
//! sparse estimation loop.
//!
//! Per outer iteration every machine rebuilds its pseudo samples from the
//! current broadcast iterate; per inner iteration the machines send local
//! gradients, the coordinator averages them, takes a gradient step, applies
//! the private top-s selector, projects onto the feasibility box, and
//! broadcasts the sparse iterate back. All privatization noise is drawn on
//! the coordinator from its own stream; workers never draw noise and never
//! read another worker's shard.

use crate::budget::{BudgetLedger, PrivacyBudget, Share};
use crate::data::{Dataset, Shard, ShardPlan};
use crate::error::{DpqrError, Result};
use crate::kernel::KernelSpec;
use crate::mechanisms::{noisy_hard_threshold, peeling_scale, truncate};
use crate::messages::{BroadcastMessage, GradientMessage};
use crate::sampling::RngStream;
use crate::transform::QuantileSpec;
use rayon::prelude::*;

/// What the transformed least squares is fit to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressionMethod {
    /// Kernel-weighted pseudo samples for the check loss.
    Quantile,
    /// Identity weights and raw responses: the plain least-squares baseline.
    LeastSquares,
}

/// How the per-call privacy budget is derived from the configured budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetMode {
    /// Every selector call gets `(eps/(mKT), delta/(mKT))`. Composition over
    /// the K*T calls then stays within the configured budget; the ledger
    /// releases the provisioned-but-unspent `(m-1)/m` fraction.
    Split,
    /// Every selector call gets the full `(eps, delta)`. This is what the
    /// reported experiment tables correspond to; the ledger records the
    /// over-consumption honestly and flags it.
    PerCall,
}

/// Step size policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaMode {
    Fixed(f64),
    /// `scale / lambda_max` where `lambda_max` is a power-iteration estimate
    /// of the central shard's pseudo-Gram top eigenvalue, computed once from
    /// the (non-private) initial estimate before the private loop starts.
    Auto { scale: f64 },
}

#[derive(Debug, Clone)]
pub struct EstimationConfig {
    pub quantile: QuantileSpec,
    pub kernel: KernelSpec,
    /// Top-s selection size. With `protect_intercept` the intercept is always
    /// retained and s counts the thresholded non-intercept coordinates.
    pub sparsity: usize,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub eta: EtaMode,
    /// Feasibility box radius C1.
    pub feasibility: f64,
    /// Entrywise clip B0 of each per-sample gradient term.
    pub clip: f64,
    pub budget: PrivacyBudget,
    pub dp_enabled: bool,
    pub budget_mode: BudgetMode,
    pub protect_intercept: bool,
    pub method: RegressionMethod,
    /// Outer re-linearizations of the non-private initial fit.
    pub init_outer: usize,
    /// Gradient steps per init re-linearization.
    pub init_inner: usize,
}

impl EstimationConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.sparsity == 0 {
            return Err(DpqrError::InvalidParameter("sparsity must be >= 1".into()));
        }
        if self.outer_iters == 0 || self.inner_iters == 0 {
            return Err(DpqrError::InvalidParameter("iteration counts must be >= 1".into()));
        }
        if !(self.feasibility > 0.0) {
            return Err(DpqrError::InvalidParameter("feasibility radius must be positive".into()));
        }
        if !(self.clip > 0.0) {
            return Err(DpqrError::InvalidParameter("clip bound must be positive".into()));
        }
        if let EtaMode::Fixed(e) = self.eta {
            if !(e > 0.0) {
                return Err(DpqrError::InvalidParameter("step size must be positive".into()));
            }
        }
        if self.dp_enabled && self.budget.delta == 0.0 {
            return Err(DpqrError::InvalidParameter(
                "the private selector needs delta > 0".into(),
            ));
        }
        if dim == 0 {
            return Err(DpqrError::InvalidParameter("empty coefficient vector".into()));
        }
        Ok(())
    }

    /// Effective selector size for a coefficient vector of length `dim`.
    fn selector_size(&self, dim: usize) -> usize {
        if self.protect_intercept {
            self.sparsity.min(dim - 1)
        } else {
            self.sparsity.min(dim)
        }
    }
}

/// A coefficient vector with its tracked selection support.
#[derive(Debug, Clone)]
pub struct SparseEstimate {
    pub values: Vec<f64>,
    /// Sorted selected positions; values are zero elsewhere.
    pub support: Vec<usize>,
}

impl SparseEstimate {
    pub fn new(values: Vec<f64>, mut support: Vec<usize>) -> Self {
        support.sort_unstable();
        support.dedup();
        Self { values, support }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { values: vec![0.0; dim], support: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// One inner round of the loop, for observability and the communication and
/// post-processing audits.
#[derive(Debug, Clone)]
pub struct RoundTrace {
    pub outer_t: u32,
    pub inner_k: u32,
    /// Encoded size of each worker->coordinator gradient message.
    pub gradient_bytes: Vec<usize>,
    /// Encoded size of the coordinator->workers broadcast.
    pub broadcast_bytes: usize,
    /// Sup-norm of the aggregated gradient step before privatization.
    pub step_linf: f64,
    /// Support of the broadcast iterate.
    pub support: Vec<usize>,
    /// Dataset row-read counter immediately before privatization.
    pub reads_before_privatize: u64,
    /// Counter after privatization and broadcast assembly: equal to the
    /// before value because post-processing never touches raw data.
    pub reads_after_privatize: u64,
}

#[derive(Debug)]
pub struct EstimationOutcome {
    /// The final iterate.
    pub estimate: SparseEstimate,
    /// The iterate after the second-to-last outer round, used as the
    /// linearization point for the precision stage.
    pub penultimate: SparseEstimate,
    pub traces: Vec<RoundTrace>,
    /// The step size actually used.
    pub eta: f64,
    /// Laplace scale of the selector calls (zero when dp is off).
    pub selector_scale: f64,
}

/// Per-machine pseudo-sample state for one outer linearization.
struct MachinePseudo {
    sqrt_w: Vec<f64>,
    y_tilde: Vec<f64>,
}

fn build_pseudo(shard: &Shard, beta: &[f64], kernel: &KernelSpec, cfg: &EstimationConfig) -> MachinePseudo {
    let n = shard.len();
    let mut sqrt_w = Vec::with_capacity(n);
    let mut y_tilde = Vec::with_capacity(n);
    match cfg.method {
        RegressionMethod::LeastSquares => {
            for i in 0..n {
                let (_, y) = shard.row(i);
                sqrt_w.push(1.0);
                y_tilde.push(y);
            }
        }
        RegressionMethod::Quantile => {
            let tau = cfg.quantile.tau;
            for i in 0..n {
                let (x, y) = shard.row(i);
                let mut xb = 0.0;
                for (xi, bi) in x.iter().zip(beta) {
                    xb += xi * bi;
                }
                let e = y - xb;
                let w = kernel.weight(e);
                let sw = w.sqrt();
                let indicator = if e <= 0.0 { 1.0 } else { 0.0 };
                sqrt_w.push(sw);
                y_tilde.push(sw * xb - (indicator - tau) / sw);
            }
        }
    }
    MachinePseudo { sqrt_w, y_tilde }
}

/// Median absolute deviation of the residuals at `beta`, used to anneal the
/// initial-fit bandwidth: a narrow kernel around a far-off start floors every
/// weight and destroys the local geometry.
fn residual_mad(shard: &Shard, beta: &[f64]) -> f64 {
    let mut e: Vec<f64> = (0..shard.len())
        .map(|i| {
            let (x, y) = shard.row(i);
            let mut xb = 0.0;
            for (xi, bi) in x.iter().zip(beta) {
                xb += xi * bi;
            }
            y - xb
        })
        .collect();
    let med = median_in_place(&mut e);
    let mut dev: Vec<f64> = e.iter().map(|v| (v - med).abs()).collect();
    median_in_place(&mut dev)
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let mid = v.len() / 2;
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Clipped average gradient of the transformed least squares over one shard.
fn machine_gradient(shard: &Shard, pseudo: &MachinePseudo, beta: &[f64], clip: f64) -> Vec<f64> {
    let dim = beta.len();
    let mut grad = vec![0.0; dim];
    for i in 0..shard.len() {
        let (x, _) = shard.row(i);
        let sw = pseudo.sqrt_w[i];
        let mut xb = 0.0;
        for (xi, bi) in x.iter().zip(beta) {
            xb += xi * bi;
        }
        let factor = (sw * xb - pseudo.y_tilde[i]) * sw;
        if clip.is_finite() {
            for (g, xi) in grad.iter_mut().zip(x.iter()) {
                *g += (factor * xi).clamp(-clip, clip);
            }
        } else {
            for (g, xi) in grad.iter_mut().zip(x.iter()) {
                *g += factor * xi;
            }
        }
    }
    let n = shard.len() as f64;
    for g in &mut grad {
        *g /= n;
    }
    grad
}

/// Power-iteration estimate of the top eigenvalue of the pseudo-Gram
/// `(1/n) sum w_i x_i x_i'` on one shard, applied implicitly.
pub fn pseudo_gram_top_eigenvalue(shard: &Shard, beta: &[f64], cfg: &EstimationConfig) -> f64 {
    let pseudo = build_pseudo(shard, beta, &cfg.kernel, cfg);
    let dim = shard.dim();
    let n = shard.len() as f64;
    let mut v: Vec<f64> = (0..dim).map(|j| 1.0 + (j as f64) / dim as f64).collect();
    normalize(&mut v);
    let mut rayleigh = 0.0;
    for _ in 0..50 {
        let mut av = vec![0.0; dim];
        for i in 0..shard.len() {
            let (x, _) = shard.row(i);
            let w = pseudo.sqrt_w[i] * pseudo.sqrt_w[i];
            let mut xv = 0.0;
            for (xi, vi) in x.iter().zip(&v) {
                xv += xi * vi;
            }
            let f = w * xv / n;
            for (a, xi) in av.iter_mut().zip(x.iter()) {
                *a += f * xi;
            }
        }
        rayleigh = av.iter().zip(&v).map(|(a, b)| a * b).sum();
        v = av;
        if normalize(&mut v) == 0.0 {
            return 1.0;
        }
    }
    rayleigh.max(1e-12)
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

/// Exact top-s hard threshold plus feasibility projection, with optional
/// intercept carve-out. Used by the non-private initial fit.
fn exact_threshold_project(beta: &mut Vec<f64>, cfg: &EstimationConfig) -> Vec<usize> {
    let dim = beta.len();
    let (lo, s) = if cfg.protect_intercept { (1, cfg.selector_size(dim)) } else { (0, cfg.selector_size(dim)) };
    let mut idx: Vec<usize> = (lo..dim).collect();
    idx.sort_by(|&a, &b| beta[b].abs().partial_cmp(&beta[a].abs()).unwrap().then(a.cmp(&b)));
    let keep: std::collections::HashSet<usize> = idx.into_iter().take(s).collect();
    let mut support: Vec<usize> = Vec::with_capacity(s + lo);
    for j in 0..dim {
        if j < lo || keep.contains(&j) {
            support.push(j);
            beta[j] = beta[j].clamp(-cfg.feasibility, cfg.feasibility);
        } else {
            beta[j] = 0.0;
        }
    }
    support
}

/// Mean of the objective the fit actually minimizes: the check loss for the
/// quantile method, half squared error for the least-squares baseline.
fn mean_loss(shard: &Shard, beta: &[f64], cfg: &EstimationConfig) -> f64 {
    let n = shard.len() as f64;
    let tau = cfg.quantile.tau;
    let mut total = 0.0;
    for i in 0..shard.len() {
        let (x, y) = shard.row(i);
        let mut xb = 0.0;
        for (xi, bi) in x.iter().zip(beta) {
            xb += xi * bi;
        }
        let e = y - xb;
        total += match cfg.method {
            RegressionMethod::Quantile => e * (tau - if e <= 0.0 { 1.0 } else { 0.0 }),
            RegressionMethod::LeastSquares => 0.5 * e * e,
        };
    }
    total / n
}

/// Non-private s-sparse fit on the central shard: iterative hard-thresholded
/// transformed-LS descent with exact top-s selection, started from the
/// intercept-only quantile (or mean) fit.
///
/// Far from the solution a full smoothed-Newton round can overshoot badly, so
/// each round's move is accepted only if it improves the raw objective,
/// backtracking toward the round start otherwise. The smoothing bandwidth is
/// annealed from the residual scale down to the configured bandwidth.
pub fn initial_estimate(central: &Shard, cfg: &EstimationConfig) -> Result<SparseEstimate> {
    if central.is_empty() {
        return Err(DpqrError::RejectedInput("empty central shard".into()));
    }
    let dim = central.dim();
    cfg.validate(dim)?;

    let mut beta = vec![0.0; dim];
    beta[0] = intercept_start(central, cfg);
    let mut support = vec![0];
    let mut loss = mean_loss(central, &beta, cfg);

    for _ in 0..cfg.init_outer {
        let kernel = match cfg.method {
            RegressionMethod::LeastSquares => cfg.kernel,
            RegressionMethod::Quantile => {
                let h = cfg.kernel.bandwidth.max(residual_mad(central, &beta));
                cfg.kernel.with_bandwidth(h)?
            }
        };
        let pseudo = build_pseudo(central, &beta, &kernel, cfg);
        let lambda_max = init_top_eigenvalue(central, &pseudo);
        let eta = 1.0 / lambda_max.max(1e-12);

        let mut candidate = beta.clone();
        let mut diverged = false;
        for _ in 0..cfg.init_inner {
            let grad = machine_gradient(central, &pseudo, &candidate, f64::INFINITY);
            for (b, g) in candidate.iter_mut().zip(&grad) {
                *b -= eta * g;
            }
            if candidate.iter().any(|b| !b.is_finite()) {
                diverged = true;
                break;
            }
            exact_threshold_project(&mut candidate, cfg);
        }
        if diverged {
            // degenerate round, keep the current iterate
            continue;
        }

        // damped acceptance: take the best raw-objective value over a
        // geometric grid of step fractions toward the round candidate
        let mut best: Option<(f64, Vec<f64>, Vec<usize>)> = None;
        let mut gamma = 1.0;
        while gamma >= 1.0 / 256.0 {
            let mut blend: Vec<f64> = beta
                .iter()
                .zip(&candidate)
                .map(|(b, c)| b + gamma * (c - b))
                .collect();
            let blend_support = exact_threshold_project(&mut blend, cfg);
            let blend_loss = mean_loss(central, &blend, cfg);
            if blend_loss < best.as_ref().map_or(loss, |(l, _, _)| *l) {
                best = Some((blend_loss, blend, blend_support));
            }
            gamma *= 0.5;
        }
        match best {
            Some((l, b, s)) => {
                loss = l;
                beta = b;
                support = s;
            }
            None => break,
        }
    }
    Ok(SparseEstimate::new(beta, support))
}

fn intercept_start(central: &Shard, cfg: &EstimationConfig) -> f64 {
    let n = central.len();
    let mut ys: Vec<f64> = (0..n).map(|i| central.row(i).1).collect();
    match cfg.method {
        RegressionMethod::LeastSquares => ys.iter().sum::<f64>() / n as f64,
        RegressionMethod::Quantile => {
            ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let k = ((cfg.quantile.tau * n as f64).ceil() as usize).clamp(1, n);
            ys[k - 1]
        }
    }
}

fn init_top_eigenvalue(shard: &Shard, pseudo: &MachinePseudo) -> f64 {
    let dim = shard.dim();
    let n = shard.len() as f64;
    let mut v: Vec<f64> = (0..dim).map(|j| 1.0 + (j as f64) / dim as f64).collect();
    normalize(&mut v);
    let mut rayleigh = 1.0;
    for _ in 0..30 {
        let mut av = vec![0.0; dim];
        for i in 0..shard.len() {
            let (x, _) = shard.row(i);
            let w = pseudo.sqrt_w[i] * pseudo.sqrt_w[i];
            let mut xv = 0.0;
            for (xi, vi) in x.iter().zip(&v) {
                xv += xi * vi;
            }
            let f = w * xv / n;
            for (a, xi) in av.iter_mut().zip(x.iter()) {
                *a += f * xi;
            }
        }
        rayleigh = av.iter().zip(&v).map(|(a, b)| a * b).sum();
        v = av;
        if normalize(&mut v) == 0.0 {
            return 1.0;
        }
    }
    rayleigh.max(1e-12)
}

/// The estimation driver.
///
/// With privacy enabled, every inner round applies the private selector at
/// the per-call budget implied by [`BudgetMode`] with sensitivity
/// `eta * B0 / (m n)`, then projects onto the feasibility box and broadcasts.
/// With privacy disabled the selector runs with `lambda = 0` (exact hard
/// thresholding) and the ledger is untouched.
pub fn dp_sparse_estimate(
    data: &Dataset,
    plan: &ShardPlan,
    cfg: &EstimationConfig,
    initial: Option<SparseEstimate>,
    coordinator_rng: &mut RngStream,
    ledger: Option<&BudgetLedger>,
) -> Result<EstimationOutcome> {
    let dim = data.dim();
    cfg.validate(dim)?;
    let m = plan.m;
    let n_local = plan.n_local;
    let shards: Vec<Shard> = (0..m).map(|k| Shard::new(data, plan, k)).collect();

    let beta0 = match initial {
        Some(b) => {
            if b.dim() != dim {
                return Err(DpqrError::DimensionMismatch { expected: dim, got: b.dim() });
            }
            b
        }
        None => initial_estimate(&shards[0], cfg)?,
    };

    let eta = match cfg.eta {
        EtaMode::Fixed(e) => e,
        EtaMode::Auto { scale } => {
            let top = pseudo_gram_top_eigenvalue(&shards[0], &beta0.values, cfg);
            scale / top
        }
    };

    let total = cfg.outer_iters * cfg.inner_iters;
    let split_parts = (m * total) as u64;
    let per_call_budget = if cfg.dp_enabled {
        match cfg.budget_mode {
            BudgetMode::Split => cfg.budget.scaled(1.0 / split_parts as f64),
            BudgetMode::PerCall => cfg.budget,
        }
    } else {
        // unused: the selector draws no noise at lambda = 0
        PrivacyBudget { epsilon: 1.0, delta: 0.5 }
    };
    let per_call_share = match cfg.budget_mode {
        BudgetMode::Split => Share::new(1, split_parts),
        BudgetMode::PerCall => Share::new(1, 1),
    };
    let lambda = if cfg.dp_enabled { eta * cfg.clip / (m * n_local) as f64 } else { 0.0 };
    let s_eff = cfg.selector_size(dim);
    let selector_scale =
        if lambda > 0.0 { peeling_scale(s_eff, per_call_budget, lambda) } else { 0.0 };

    let mut traces = Vec::with_capacity(total);
    let mut beta_prev = beta0.clone();
    let mut penultimate = beta0.clone();

    for t in 1..=cfg.outer_iters {
        if t == cfg.outer_iters {
            penultimate = beta_prev.clone();
        }
        let pseudo: Vec<MachinePseudo> =
            shards.par_iter().map(|s| build_pseudo(s, &beta_prev.values, &cfg.kernel, cfg)).collect();

        let mut beta_k = beta_prev;
        for k in 1..=cfg.inner_iters {
            // workers compute and send gradients
            let encoded: Vec<Vec<u8>> = shards
                .par_iter()
                .zip(&pseudo)
                .enumerate()
                .map(|(j, (shard, ps))| {
                    let gradient = machine_gradient(shard, ps, &beta_k.values, cfg.clip);
                    GradientMessage {
                        machine_id: j as u32,
                        outer_t: t as u32,
                        inner_k: k as u32,
                        gradient,
                    }
                    .encode()
                })
                .collect();

            // coordinator decodes and reduces in fixed machine order
            let mut step = vec![0.0; dim];
            let mut gradient_bytes = Vec::with_capacity(m);
            for bytes in &encoded {
                let msg = GradientMessage::decode(bytes)?;
                gradient_bytes.push(bytes.len());
                for (s, g) in step.iter_mut().zip(&msg.gradient) {
                    *s += g;
                }
            }
            let scale = eta / m as f64;
            let mut beta_half = beta_k.values;
            let mut step_linf = 0.0f64;
            for (b, s) in beta_half.iter_mut().zip(&step) {
                let delta = scale * s;
                step_linf = step_linf.max(delta.abs());
                *b -= delta;
            }
            if beta_half.iter().any(|b| !b.is_finite()) {
                return Err(DpqrError::EstimationAborted(format!(
                    "non-finite iterate at outer {t} inner {k}"
                )));
            }

            let reads_before_privatize = data.row_reads();
            // privatize: select, add value noise, project
            let (values, support) =
                privatize_update(&beta_half, s_eff, per_call_budget, lambda, cfg, coordinator_rng)?;
            if let Some(ledger) = ledger {
                if cfg.dp_enabled {
                    ledger.charge(format!("estimate/select t={t} k={k}"), per_call_share);
                }
            }
            let projected = truncate(&values, cfg.feasibility)?;

            // broadcast back to workers
            let bmsg = BroadcastMessage {
                outer_t: t as u32,
                inner_k: k as u32,
                support: support.iter().map(|&j| j as u32).collect(),
                values: support.iter().map(|&j| projected[j]).collect(),
            };
            let broadcast = bmsg.encode();
            let decoded = BroadcastMessage::decode(&broadcast)?;
            let reads_after_privatize = data.row_reads();

            beta_k = SparseEstimate::new(decoded.to_dense(dim)?, support.clone());
            traces.push(RoundTrace {
                outer_t: t as u32,
                inner_k: k as u32,
                gradient_bytes,
                broadcast_bytes: broadcast.len(),
                step_linf,
                support,
                reads_before_privatize,
                reads_after_privatize,
            });
        }
        beta_prev = beta_k;
    }

    if cfg.dp_enabled && cfg.budget_mode == BudgetMode::Split {
        if let Some(ledger) = ledger {
            ledger.release("estimate/unspent", Share::new((m - 1) as u64, m as u64));
        }
    }

    Ok(EstimationOutcome {
        estimate: beta_prev,
        penultimate,
        traces,
        eta,
        selector_scale,
    })
}

fn privatize_update(
    beta_half: &[f64],
    s_eff: usize,
    budget: PrivacyBudget,
    lambda: f64,
    cfg: &EstimationConfig,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let dim = beta_half.len();
    if cfg.protect_intercept {
        let tail = &beta_half[1..];
        let sel = noisy_hard_threshold(tail, s_eff, budget, lambda, rng)?;
        let scale = if lambda > 0.0 { peeling_scale(s_eff, budget, lambda) } else { 0.0 };
        let mut values = vec![0.0; dim];
        values[0] = beta_half[0] + rng.laplace(scale);
        for (j, v) in sel.values.iter().enumerate() {
            values[j + 1] = *v;
        }
        let mut support: Vec<usize> = sel.support.iter().map(|&j| j + 1).collect();
        support.push(0);
        support.sort_unstable();
        Ok((values, support))
    } else {
        let sel = noisy_hard_threshold(beta_half, s_eff, budget, lambda, rng)?;
        let mut support = sel.support.clone();
        support.sort_unstable();
        Ok((sel.values, support))
    }
}
