//! Debiased estimation and coordinate-wise confidence intervals.
//!
//! The sparse iterate is corrected with a precision-weighted average of the
//! raw check-loss subgradients and privatized with per-coordinate Gaussian
//! noise. Intervals take the normal form
//!
//! ```text
//! center +/- z_{1-a/2} sqrt(tau(1-tau)) / sqrt(N)
//!        * sqrt(mean_k sigma_k + 8 B2^2 log(1/delta) / (N eps^2))
//! ```
//!
//! where `sigma_k = w_j' (raw local Gram) w_j` is machine k's variance
//! contribution and the second term carries the injected privacy noise.

use crate::budget::{BudgetLedger, PrivacyBudget, Share};
use crate::data::{Dataset, Shard, ShardPlan};
use crate::engine::SparseEstimate;
use crate::error::{DpqrError, Result};
use crate::precision::PrecisionEstimate;
use crate::sampling::RngStream;
use crate::transform::QuantileSpec;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

/// Debiased coefficient vector with its privacy noise level.
#[derive(Debug, Clone)]
pub struct DebiasedEstimate {
    pub values: Vec<f64>,
    pub dp_noise_sigma: f64,
    pub source_round: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalMethod {
    Normal,
    Bootstrap,
}

impl IntervalMethod {
    pub fn name(&self) -> &'static str {
        match self {
            IntervalMethod::Normal => "normal",
            IntervalMethod::Bootstrap => "bootstrap",
        }
    }
}

/// One coordinate's confidence interval.
#[derive(Debug, Clone)]
pub struct IntervalReport {
    pub coordinate: usize,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub sigma_hat: f64,
    pub method: IntervalMethod,
}

impl IntervalReport {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.lower <= truth && truth <= self.upper
    }
}

/// Raw check-loss subgradient `(1/n) sum (1{y - x'b <= 0} - tau) x` for each
/// machine, in machine order.
pub fn machine_subgradients(
    data: &Dataset,
    plan: &ShardPlan,
    beta: &[f64],
    tau: f64,
) -> Vec<Vec<f64>> {
    (0..plan.m)
        .into_par_iter()
        .map(|k| {
            let shard = Shard::new(data, plan, k);
            let mut g = vec![0.0; shard.dim()];
            for i in 0..shard.len() {
                let (x, y) = shard.row(i);
                let mut xb = 0.0;
                for (xi, bi) in x.iter().zip(beta) {
                    xb += xi * bi;
                }
                let f = if y - xb <= 0.0 { 1.0 } else { 0.0 } - tau;
                for (gj, xi) in g.iter_mut().zip(x.iter()) {
                    *gj += f * xi;
                }
            }
            let n = shard.len() as f64;
            for gj in &mut g {
                *gj /= n;
            }
            g
        })
        .collect()
}

/// Per-sample subgradients `(1{y_i - x_i'b <= 0} - tau) x_i` on the central
/// machine, used by the small-m bootstrap variant.
pub fn central_per_sample_subgradients(
    data: &Dataset,
    plan: &ShardPlan,
    beta: &[f64],
    tau: f64,
) -> Vec<Vec<f64>> {
    let shard = Shard::new(data, plan, 0);
    (0..shard.len())
        .map(|i| {
            let (x, y) = shard.row(i);
            let mut xb = 0.0;
            for (xi, bi) in x.iter().zip(beta) {
                xb += xi * bi;
            }
            let f = if y - xb <= 0.0 { 1.0 } else { 0.0 } - tau;
            x.iter().map(|xi| f * xi).collect()
        })
        .collect()
}

/// Debias noise sd `B2 sqrt(log(1.25/delta)) / (n m eps)` per coordinate.
pub fn debias_noise_sigma(
    n_local: usize,
    m: usize,
    budget: PrivacyBudget,
    b2: f64,
) -> Result<f64> {
    if budget.delta == 0.0 {
        return Err(DpqrError::GaussianNeedsDelta);
    }
    Ok(b2 * (1.25 / budget.delta).ln().sqrt() / (n_local as f64 * m as f64 * budget.epsilon))
}

/// Forms the debiased estimate `beta - W gbar + E`.
///
/// `gbar` is the across-machine average of the raw subgradients at `beta`,
/// and the correction subtracts the precision-weighted average so the
/// leading error term becomes the influence average required for normal
/// inference (a Newton step on the check-loss risk).
#[allow(clippy::too_many_arguments)]
pub fn debias(
    beta_t0: &SparseEstimate,
    w: &PrecisionEstimate,
    data: &Dataset,
    plan: &ShardPlan,
    quantile: QuantileSpec,
    budget: PrivacyBudget,
    b2: f64,
    dp_enabled: bool,
    source_round: usize,
    rng: &mut RngStream,
    ledger: Option<&BudgetLedger>,
) -> Result<DebiasedEstimate> {
    let dim = data.dim();
    if beta_t0.dim() != dim {
        return Err(DpqrError::DimensionMismatch { expected: dim, got: beta_t0.dim() });
    }
    if w.w.nrows() != dim {
        return Err(DpqrError::DimensionMismatch { expected: dim, got: w.w.nrows() });
    }
    let grads = machine_subgradients(data, plan, &beta_t0.values, quantile.tau);
    let mut gbar = vec![0.0; dim];
    for g in &grads {
        for (a, b) in gbar.iter_mut().zip(g) {
            *a += b;
        }
    }
    for a in &mut gbar {
        *a /= plan.m as f64;
    }

    let sigma = if dp_enabled { debias_noise_sigma(plan.n_local, plan.m, budget, b2)? } else { 0.0 };
    let mut values = Vec::with_capacity(dim);
    for j in 0..dim {
        let mut corr = 0.0;
        for k in 0..dim {
            corr += w.w[(j, k)] * gbar[k];
        }
        values.push(beta_t0.values[j] - corr + rng.normal(sigma));
    }
    if dp_enabled {
        if let Some(ledger) = ledger {
            ledger.charge("inference/debias", Share::new(1, 1));
        }
    }
    Ok(DebiasedEstimate { values, dp_noise_sigma: sigma, source_round })
}

/// Machine k's variance contribution `w_j' ((1/n) sum x x') w_j`, computed
/// as the mean squared projection without materializing the Gram.
pub fn machine_sigma(shard: &Shard, w_row: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..shard.len() {
        let (x, _) = shard.row(i);
        let mut proj = 0.0;
        for (xi, wi) in x.iter().zip(w_row) {
            proj += xi * wi;
        }
        total += proj * proj;
    }
    total / shard.len() as f64
}

/// Average variance contribution across machines for coordinate j.
pub fn mean_sigma(data: &Dataset, plan: &ShardPlan, w: &PrecisionEstimate, j: usize) -> f64 {
    let row = w.row(j);
    let sigmas: Vec<f64> = (0..plan.m)
        .into_par_iter()
        .map(|k| machine_sigma(&Shard::new(data, plan, k), &row))
        .collect();
    sigmas.iter().sum::<f64>() / plan.m as f64
}

/// Variance inflation `8 B2^2 log(1/delta) / (N eps^2)` carried by the
/// injected debias noise.
pub fn privacy_variance_term(
    n_total: usize,
    budget: PrivacyBudget,
    b2: f64,
    dp_enabled: bool,
) -> f64 {
    if !dp_enabled || budget.delta == 0.0 {
        return 0.0;
    }
    8.0 * b2 * b2 * (1.0 / budget.delta).ln() / (n_total as f64 * budget.epsilon * budget.epsilon)
}

/// Half-width of the normal interval.
pub fn ci_half_width(
    alpha: f64,
    tau: f64,
    n_total: usize,
    mean_sigma: f64,
    privacy_term: f64,
) -> f64 {
    let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(1.0 - alpha / 2.0);
    z * (tau * (1.0 - tau)).sqrt() / (n_total as f64).sqrt() * (mean_sigma + privacy_term).sqrt()
}

/// Two-sided normal confidence interval for one coordinate.
#[allow(clippy::too_many_arguments)]
pub fn coordinate_ci(
    est: &DebiasedEstimate,
    w: &PrecisionEstimate,
    data: &Dataset,
    plan: &ShardPlan,
    j: usize,
    alpha: f64,
    quantile: QuantileSpec,
    budget: PrivacyBudget,
    b2: f64,
    dp_enabled: bool,
) -> Result<IntervalReport> {
    if j >= est.values.len() {
        return Err(DpqrError::InvalidParameter(format!("coordinate {j} out of range")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DpqrError::InvalidParameter(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let ms = mean_sigma(data, plan, w, j);
    debug_assert!(ms >= 0.0, "Gram quadratic form must be nonnegative");
    let priv_term = privacy_variance_term(data.n(), budget, b2, dp_enabled);
    let half = ci_half_width(alpha, quantile.tau, data.n(), ms, priv_term);
    let center = est.values[j];
    Ok(IntervalReport {
        coordinate: j,
        lower: center - half,
        upper: center + half,
        level: 1.0 - alpha,
        sigma_hat: ms,
        method: IntervalMethod::Normal,
    })
}

/// Simulation-only studentized statistic for coordinate j against a known
/// truth: `sqrt(N)(est_j - truth) / (sqrt(tau(1-tau)) sqrt(mean sigma + priv))`,
/// the exact pivot the normal interval inverts.
#[allow(clippy::too_many_arguments)]
pub fn standardized_statistic(
    est: &DebiasedEstimate,
    w: &PrecisionEstimate,
    data: &Dataset,
    plan: &ShardPlan,
    j: usize,
    quantile: QuantileSpec,
    budget: PrivacyBudget,
    b2: f64,
    dp_enabled: bool,
    truth_j: f64,
) -> Result<f64> {
    if j >= est.values.len() {
        return Err(DpqrError::InvalidParameter(format!("coordinate {j} out of range")));
    }
    let ms = mean_sigma(data, plan, w, j);
    let priv_term = privacy_variance_term(data.n(), budget, b2, dp_enabled);
    let tau = quantile.tau;
    let denom = (tau * (1.0 - tau)).sqrt() * (ms + priv_term).sqrt();
    Ok((data.n() as f64).sqrt() * (est.values[j] - truth_j) / denom)
}
