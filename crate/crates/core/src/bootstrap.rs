//! Private multiplier bootstrap for simultaneous inference.
//!
//! Each replicate draws standard normal multipliers, forms a distributed
//! bootstrap statistic from the machine-level (or central per-sample)
//! subgradients, and privatizes it with the top-1 selector. The selector
//! output has exactly one nonzero coordinate, so its l1 and sup norms agree;
//! the replicate contributes that coordinate's signed value (whose magnitude
//! is the norm) so the collected sample is two-sided and the quantile pair
//! yields a proper simultaneous region.

use crate::budget::{BudgetLedger, PrivacyBudget, Share};
use crate::data::{Dataset, ShardPlan};
use crate::engine::{BudgetMode, SparseEstimate};
use crate::error::{DpqrError, Result};
use crate::inference::{central_per_sample_subgradients, machine_subgradients, DebiasedEstimate, IntervalMethod, IntervalReport};
use crate::mechanisms::noisy_hard_threshold;
use crate::precision::PrecisionEstimate;
use crate::sampling::{streams, RngStream};
use crate::transform::QuantileSpec;
use ndarray::Array2;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BootstrapVariant {
    /// Across-machine centering, for many machines.
    KGrad,
    /// Central per-sample plus machine gradients, for few machines.
    Nk1Grad,
}

impl BootstrapVariant {
    pub fn name(&self) -> &'static str {
        match self {
            BootstrapVariant::KGrad => "k-grad",
            BootstrapVariant::Nk1Grad => "(n+k-1)-grad",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantChoice {
    /// k-grad when `m >= machine_threshold`, the other variant below it.
    Auto,
    Force(BootstrapVariant),
}

#[derive(Debug, Clone)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub machine_threshold: usize,
    pub alpha: f64,
    pub budget: PrivacyBudget,
    /// Entrywise clip bound of the raw statistic; also the selector
    /// sensitivity, making the stated privacy scale literal.
    pub b3: f64,
    pub dp_enabled: bool,
    pub budget_mode: BudgetMode,
    pub variant: VariantChoice,
    /// Seed for the multiplier and selector streams (one stream per
    /// replicate, id `BOOTSTRAP_BASE + r`).
    pub seed: u64,
}

impl BootstrapConfig {
    fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(DpqrError::RejectedInput("bootstrap needs at least one replicate".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(DpqrError::InvalidParameter(format!(
                "alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if !(self.b3 > 0.0) {
            return Err(DpqrError::InvalidParameter("B3 must be positive".into()));
        }
        Ok(())
    }
}

/// Empirical quantile pair of the signed replicate statistics.
#[derive(Debug, Clone)]
pub struct BootstrapQuantiles {
    pub q_low: f64,
    pub q_high: f64,
    pub alpha: f64,
    pub samples: Vec<f64>,
    pub variant: BootstrapVariant,
}

/// Across-machine multiplier statistic
/// `W (1/sqrt(m)) sum_j xi_j sqrt(n) (g_j - gbar)`.
pub fn kgrad_statistic(
    w: &Array2<f64>,
    grads: &[Vec<f64>],
    n_local: usize,
    multipliers: &[f64],
) -> Result<Vec<f64>> {
    let m = grads.len();
    if m < 2 {
        return Err(DpqrError::RejectedInput(
            "k-grad centering needs at least two machines".into(),
        ));
    }
    if multipliers.len() != m {
        return Err(DpqrError::DimensionMismatch { expected: m, got: multipliers.len() });
    }
    let dim = grads[0].len();
    let mut gbar = vec![0.0; dim];
    for g in grads {
        for (a, b) in gbar.iter_mut().zip(g) {
            *a += b / m as f64;
        }
    }
    let root_n = (n_local as f64).sqrt();
    let mut inner = vec![0.0; dim];
    for (g, &xi) in grads.iter().zip(multipliers) {
        for ((acc, gj), gb) in inner.iter_mut().zip(g).zip(&gbar) {
            *acc += xi * root_n * (gj - gb);
        }
    }
    let scale = 1.0 / (m as f64).sqrt();
    for v in &mut inner {
        *v *= scale;
    }
    Ok(apply(w, &inner))
}

/// Small-m multiplier statistic
/// `W (1/sqrt(n+m-1)) { sum_{i in central} xi_i (g_1i - gbar)
///  + sum_{j=2..m} xi_{n+j-1} sqrt(n) (g_j - gbar) }`.
pub fn nk1grad_statistic(
    w: &Array2<f64>,
    central_samples: &[Vec<f64>],
    machine_grads: &[Vec<f64>],
    multipliers: &[f64],
) -> Result<Vec<f64>> {
    let n = central_samples.len();
    let m = machine_grads.len() + 1;
    if n == 0 {
        return Err(DpqrError::RejectedInput("central shard has no samples".into()));
    }
    if multipliers.len() != n + m - 1 {
        return Err(DpqrError::DimensionMismatch { expected: n + m - 1, got: multipliers.len() });
    }
    let dim = central_samples[0].len();
    // global mean gradient over all m machines
    let mut gbar = vec![0.0; dim];
    for s in central_samples {
        for (a, b) in gbar.iter_mut().zip(s) {
            *a += b / (n as f64 * m as f64);
        }
    }
    for g in machine_grads {
        for (a, b) in gbar.iter_mut().zip(g) {
            *a += b / m as f64;
        }
    }
    let mut inner = vec![0.0; dim];
    for (s, &xi) in central_samples.iter().zip(&multipliers[..n]) {
        for ((acc, sj), gb) in inner.iter_mut().zip(s).zip(&gbar) {
            *acc += xi * (sj - gb);
        }
    }
    let root_n = (n as f64).sqrt();
    for (g, &xi) in machine_grads.iter().zip(&multipliers[n..]) {
        for ((acc, gj), gb) in inner.iter_mut().zip(g).zip(&gbar) {
            *acc += xi * root_n * (gj - gb);
        }
    }
    let scale = 1.0 / ((n + m - 1) as f64).sqrt();
    for v in &mut inner {
        *v *= scale;
    }
    Ok(apply(w, &inner))
}

fn apply(w: &Array2<f64>, v: &[f64]) -> Vec<f64> {
    let dim = w.nrows();
    let mut out = vec![0.0; dim];
    for j in 0..dim {
        let mut acc = 0.0;
        for k in 0..dim {
            acc += w[(j, k)] * v[k];
        }
        out[j] = acc;
    }
    out
}

/// Runs the replicate loop and returns the two-sided quantile pair of the
/// privatized statistics.
pub fn private_bootstrap(
    data: &Dataset,
    plan: &ShardPlan,
    beta_t0: &SparseEstimate,
    w: &PrecisionEstimate,
    quantile: QuantileSpec,
    cfg: &BootstrapConfig,
    ledger: Option<&BudgetLedger>,
) -> Result<BootstrapQuantiles> {
    cfg.validate()?;
    let variant = match cfg.variant {
        VariantChoice::Force(v) => v,
        VariantChoice::Auto => {
            if plan.m >= cfg.machine_threshold {
                BootstrapVariant::KGrad
            } else {
                BootstrapVariant::Nk1Grad
            }
        }
    };
    if variant == BootstrapVariant::KGrad && plan.m < 2 {
        return Err(DpqrError::RejectedInput("k-grad needs at least two machines".into()));
    }

    let grads = machine_subgradients(data, plan, &beta_t0.values, quantile.tau);
    let central = match variant {
        BootstrapVariant::Nk1Grad => {
            central_per_sample_subgradients(data, plan, &beta_t0.values, quantile.tau)
        }
        BootstrapVariant::KGrad => Vec::new(),
    };
    let multiplier_count = match variant {
        BootstrapVariant::KGrad => plan.m,
        BootstrapVariant::Nk1Grad => plan.n_local + plan.m - 1,
    };

    let per_call_budget = match cfg.budget_mode {
        BudgetMode::Split => cfg.budget.scaled(1.0 / cfg.replicates as f64),
        BudgetMode::PerCall => cfg.budget,
    };
    let lambda = if cfg.dp_enabled { cfg.b3 } else { 0.0 };

    let samples: Result<Vec<f64>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = RngStream::new(cfg.seed, streams::BOOTSTRAP_BASE + r as u64);
            let multipliers: Vec<f64> =
                (0..multiplier_count).map(|_| rng.standard_normal()).collect();
            let mut stat = match variant {
                BootstrapVariant::KGrad => {
                    kgrad_statistic(&w.w, &grads, plan.n_local, &multipliers)?
                }
                BootstrapVariant::Nk1Grad => {
                    nk1grad_statistic(&w.w, &central, &grads[1..], &multipliers)?
                }
            };
            if cfg.dp_enabled {
                for v in &mut stat {
                    *v = v.clamp(-cfg.b3, cfg.b3);
                }
            }
            let sel = noisy_hard_threshold(&stat, 1, per_call_budget, lambda, &mut rng)?;
            Ok(sel.values[sel.support[0]])
        })
        .collect();
    let samples = samples?;

    if cfg.dp_enabled {
        if let Some(ledger) = ledger {
            let share = match cfg.budget_mode {
                BudgetMode::Split => Share::new(1, 1),
                BudgetMode::PerCall => Share::new(cfg.replicates as u64, 1),
            };
            ledger.charge(
                format!("bootstrap/select x{} ({:?})", cfg.replicates, cfg.budget_mode),
                share,
            );
        }
    }

    let q_low = order_statistic(&samples, cfg.alpha / 2.0);
    let q_high = order_statistic(&samples, 1.0 - cfg.alpha / 2.0);
    Ok(BootstrapQuantiles { q_low, q_high, alpha: cfg.alpha, samples, variant })
}

/// Lower empirical quantile: the `ceil(q n)`-th smallest sample.
pub fn order_statistic(samples: &[f64], q: f64) -> f64 {
    assert!(!samples.is_empty());
    let n = samples.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
    let mut work = samples.to_vec();
    let (_, kth, _) = work.select_nth_unstable_by(k, |a, b| a.partial_cmp(b).unwrap());
    *kth
}

/// Per-coordinate simultaneous intervals
/// `[center - q_high/sqrt(N), center - q_low/sqrt(N)]`.
pub fn simultaneous_cis(
    est: &DebiasedEstimate,
    q: &BootstrapQuantiles,
    n_total: usize,
) -> Vec<IntervalReport> {
    let root_n = (n_total as f64).sqrt();
    est.values
        .iter()
        .enumerate()
        .map(|(j, &center)| IntervalReport {
            coordinate: j,
            lower: center - q.q_high / root_n,
            upper: center - q.q_low / root_n,
            level: 1.0 - q.alpha,
            sigma_hat: f64::NAN,
            method: IntervalMethod::Bootstrap,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{partition, Dataset};
    use approx::assert_abs_diff_eq;
    use ndarray::{Array1, Array2};

    #[test]
    fn kgrad_equal_gradients_vanish() {
        let w = Array2::<f64>::eye(2);
        let grads = vec![vec![0.3, -0.1]; 4];
        let xi = vec![1.0, -2.0, 0.5, 3.0];
        let out = kgrad_statistic(&w, &grads, 7, &xi).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn kgrad_zero_multipliers_vanish() {
        let w = Array2::<f64>::eye(2);
        let grads = vec![vec![0.3, -0.1], vec![1.0, 2.0]];
        let out = kgrad_statistic(&w, &grads, 3, &[0.0, 0.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn kgrad_hand_example() {
        // m=2, n=1, W=I, g1=(1,0), g2=(0,0), xi=(1,-1):
        // gbar=(0.5,0); (1/sqrt 2)[(0.5,0) - (-0.5,0)] = (sqrt(2)/2, 0)
        let w = Array2::<f64>::eye(2);
        let out =
            kgrad_statistic(&w, &[vec![1.0, 0.0], vec![0.0, 0.0]], 1, &[1.0, -1.0]).unwrap();
        assert_abs_diff_eq!(out[0], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn kgrad_single_machine_rejected() {
        let w = Array2::<f64>::eye(1);
        assert!(kgrad_statistic(&w, &[vec![1.0]], 1, &[1.0]).is_err());
    }

    #[test]
    fn nk1_equal_gradients_vanish() {
        let w = Array2::<f64>::eye(2);
        let central = vec![vec![0.5, -0.5]; 3];
        let machines = vec![vec![0.5, -0.5]; 2];
        let xi = vec![1.0; 5];
        let out = nk1grad_statistic(&w, &central, &machines, &xi).unwrap();
        for v in out {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn nk1_single_machine_hand_example() {
        // n=2, m=1, W=I, per-sample grads (1) and (-1), xi=(1,1):
        // gbar = 0, statistic = (1/sqrt 2)(1 - 1) = 0
        let w = Array2::<f64>::eye(1);
        let out = nk1grad_statistic(&w, &[vec![1.0], vec![-1.0]], &[], &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(out[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn order_statistics_match_sort_oracle() {
        let mut rng = RngStream::new(9, 0);
        let samples: Vec<f64> = (0..501).map(|_| rng.laplace(2.0)).collect();
        let mut sorted = samples.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &q in &[0.01, 0.025, 0.5, 0.975, 0.99] {
            let k = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
            assert_eq!(order_statistic(&samples, q), sorted[k]);
        }
        // constant sample: both quantiles equal the constant
        let constant = vec![3.25; 100];
        assert_eq!(order_statistic(&constant, 0.025), 3.25);
        assert_eq!(order_statistic(&constant, 0.975), 3.25);
    }

    fn toy_setup(n: usize, m: usize, p: usize) -> (Dataset, ShardPlan) {
        let mut rng = RngStream::new(4, streams::DATA);
        let mut x = Array2::zeros((n, p + 1));
        let mut y = Array1::zeros(n);
        for i in 0..n {
            x[(i, 0)] = 1.0;
            for j in 1..=p {
                x[(i, j)] = rng.standard_normal();
            }
            y[i] = x[(i, 1)] + rng.standard_normal();
        }
        let data = Dataset::new(x, y).unwrap();
        let mut prng = RngStream::new(5, streams::PARTITION);
        let plan = partition(&data, m, &mut prng).unwrap();
        (data, plan)
    }

    fn toy_precision(dim: usize) -> PrecisionEstimate {
        PrecisionEstimate {
            w: Array2::eye(dim),
            gamma: 0.1,
            column_violation: 0.0,
            symmetrized_violation: 0.0,
        }
    }

    fn toy_config(n_b: usize, dp: bool) -> BootstrapConfig {
        BootstrapConfig {
            replicates: n_b,
            machine_threshold: 3,
            alpha: 0.1,
            budget: PrivacyBudget::new(1.0, 1e-3).unwrap(),
            b3: 10.0,
            dp_enabled: dp,
            budget_mode: BudgetMode::Split,
            variant: VariantChoice::Auto,
            seed: 99,
        }
    }

    #[test]
    fn variant_switch_on_machine_count() {
        let (data, plan) = toy_setup(40, 4, 2);
        let beta = SparseEstimate::new(vec![0.0, 1.0, 0.0], vec![1]);
        let w = toy_precision(3);
        let q = QuantileSpec::new(0.5).unwrap();
        let cfg = toy_config(50, false);
        let out = private_bootstrap(&data, &plan, &beta, &w, q, &cfg, None).unwrap();
        assert_eq!(out.variant, BootstrapVariant::KGrad); // m=4 >= threshold 3

        let (data2, plan2) = toy_setup(40, 2, 2);
        let out2 = private_bootstrap(&data2, &plan2, &beta, &w, q, &cfg, None).unwrap();
        assert_eq!(out2.variant, BootstrapVariant::Nk1Grad);
    }

    #[test]
    fn zero_noise_samples_equal_statistic_sup_norm() {
        let (data, plan) = toy_setup(60, 3, 2);
        let beta = SparseEstimate::new(vec![0.0, 0.5, 0.0], vec![1]);
        let w = toy_precision(3);
        let q = QuantileSpec::new(0.5).unwrap();
        let cfg = toy_config(25, false);
        let out = private_bootstrap(&data, &plan, &beta, &w, q, &cfg, None).unwrap();
        // recompute each replicate's raw statistic with the same streams
        let grads = machine_subgradients(&data, &plan, &beta.values, 0.5);
        for (r, sample) in out.samples.iter().enumerate() {
            let mut rng = RngStream::new(cfg.seed, streams::BOOTSTRAP_BASE + r as u64);
            let xi: Vec<f64> = (0..plan.m).map(|_| rng.standard_normal()).collect();
            let stat = kgrad_statistic(&w.w, &grads, plan.n_local, &xi).unwrap();
            let sup = stat.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            assert_abs_diff_eq!(sample.abs(), sup, epsilon = 1e-12);
        }
    }

    #[test]
    fn quantiles_reproducible_bitwise() {
        let (data, plan) = toy_setup(60, 3, 2);
        let beta = SparseEstimate::new(vec![0.0, 0.5, 0.0], vec![1]);
        let w = toy_precision(3);
        let q = QuantileSpec::new(0.5).unwrap();
        let cfg = toy_config(40, true);
        let a = private_bootstrap(&data, &plan, &beta, &w, q, &cfg, None).unwrap();
        let b = private_bootstrap(&data, &plan, &beta, &w, q, &cfg, None).unwrap();
        assert_eq!(a.q_low.to_bits(), b.q_low.to_bits());
        assert_eq!(a.q_high.to_bits(), b.q_high.to_bits());
    }

    #[test]
    fn interval_endpoints_and_width() {
        let est = DebiasedEstimate {
            values: vec![1.0, -2.0],
            dp_noise_sigma: 0.0,
            source_round: 10,
        };
        let q = BootstrapQuantiles {
            q_low: -3.0,
            q_high: 5.0,
            alpha: 0.05,
            samples: vec![],
            variant: BootstrapVariant::KGrad,
        };
        let cis = simultaneous_cis(&est, &q, 400);
        // width (q_high - q_low)/sqrt(N) = 8/20
        for ci in &cis {
            assert_abs_diff_eq!(ci.width(), 0.4, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(cis[0].lower, 1.0 - 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(cis[0].upper, 1.0 + 0.15, epsilon = 1e-12);
        // degenerate quantiles collapse to the center
        let q0 = BootstrapQuantiles {
            q_low: 0.0,
            q_high: 0.0,
            alpha: 0.05,
            samples: vec![],
            variant: BootstrapVariant::KGrad,
        };
        let point = simultaneous_cis(&est, &q0, 400);
        assert_eq!(point[0].lower, point[0].upper);
        // quadrupling N halves the width
        let wide = simultaneous_cis(&est, &q, 1600);
        assert_abs_diff_eq!(wide[0].width(), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_statistics_give_symmetric_intervals() {
        // with many replicates and symmetric multipliers the signed sample
        // is near-symmetric, so the interval is near-centered on the estimate
        let (data, plan) = toy_setup(120, 3, 2);
        let beta = SparseEstimate::new(vec![0.0, 0.5, 0.0], vec![1]);
        let w = toy_precision(3);
        let q = QuantileSpec::new(0.5).unwrap();
        let mut cfg = toy_config(4000, false);
        cfg.alpha = 0.1;
        let out = private_bootstrap(&data, &plan, &beta, &w, q, &cfg, None).unwrap();
        assert!(
            (out.q_low + out.q_high).abs() < 0.25 * (out.q_high - out.q_low),
            "asymmetry too large: [{}, {}]",
            out.q_low,
            out.q_high
        );
    }
}
