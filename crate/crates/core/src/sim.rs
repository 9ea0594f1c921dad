//! Simulation designs, metrics, and multi-replicate experiment runs.
//!
//! Covariates follow an AR(1) Gaussian with `Sigma_ij = rho^{|i-j|}`
//! (generated through the closed-form Cholesky recursion), responses follow
//! the homoscedastic or heteroscedastic linear model with normal, t(3), or
//! Cauchy noise, and every replicate is seeded from
//! `(master seed, design id, replicate)` only, so privacy levels share
//! common random numbers across a sweep.

use crate::bootstrap::{private_bootstrap, simultaneous_cis, BootstrapConfig, VariantChoice};
use crate::budget::{BudgetLedger, PrivacyBudget};
use crate::data::{partition, Dataset, Shard, ShardPlan};
use crate::engine::{
    dp_sparse_estimate, BudgetMode, EstimationConfig, EstimationOutcome, EtaMode,
    RegressionMethod, SparseEstimate,
};
use crate::error::{DpqrError, Result};
use crate::inference::{
    coordinate_ci, debias, standardized_statistic, DebiasedEstimate, IntervalReport,
};
use crate::kernel::{default_bandwidth, KernelFamily, KernelSpec, DEFAULT_DENSITY_FLOOR};
use crate::precision::{choose_gamma, clime_solve, noisy_pseudo_covariance, ClimeObjective, PrecisionEstimate};
use crate::sampling::{derive_seed, streams, RngStream};
use crate::transform::QuantileSpec;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// `y = x'b + e`
    Homoscedastic,
    /// `y = x'b + (1 + 0.4 x_1) e`
    Heteroscedastic,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Homoscedastic => "homoscedastic",
            ModelKind::Heteroscedastic => "heteroscedastic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "homoscedastic" | "model1" => Ok(ModelKind::Homoscedastic),
            "heteroscedastic" | "model2" => Ok(ModelKind::Heteroscedastic),
            other => Err(DpqrError::InvalidParameter(format!("unknown model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseFamily {
    Normal,
    T3,
    Cauchy,
}

impl NoiseFamily {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseFamily::Normal => "normal",
            NoiseFamily::T3 => "t3",
            NoiseFamily::Cauchy => "cauchy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(NoiseFamily::Normal),
            "t3" => Ok(NoiseFamily::T3),
            "cauchy" => Ok(NoiseFamily::Cauchy),
            other => Err(DpqrError::InvalidParameter(format!("unknown noise family '{other}'"))),
        }
    }

    fn draw(&self, rng: &mut RngStream) -> f64 {
        match self {
            NoiseFamily::Normal => rng.standard_normal(),
            NoiseFamily::T3 => rng.student_t3(),
            NoiseFamily::Cauchy => rng.cauchy(),
        }
    }

    /// tau-quantile of the standard member of the family.
    pub fn quantile(&self, tau: f64) -> f64 {
        match self {
            NoiseFamily::Normal => Normal::new(0.0, 1.0).unwrap().inverse_cdf(tau),
            NoiseFamily::T3 => StudentsT::new(0.0, 1.0, 3.0).unwrap().inverse_cdf(tau),
            NoiseFamily::Cauchy => (std::f64::consts::PI * (tau - 0.5)).tan(),
        }
    }
}

/// One data-generating design.
#[derive(Debug, Clone)]
pub struct SimDesign {
    pub id: String,
    pub model: ModelKind,
    pub noise: NoiseFamily,
    /// Multiplier on the noise draw; zero gives a noiseless diagnostic set.
    pub noise_scale: f64,
    pub p: usize,
    pub n_total: usize,
    pub m: usize,
    pub beta_true: Vec<f64>,
    pub rho: f64,
    pub tau: f64,
}

impl SimDesign {
    /// The benchmark coefficient vector `(1, 1, 2, 3, 4, 5, 0, ...)`.
    pub fn default_beta(p: usize) -> Vec<f64> {
        let mut beta = vec![0.0; p + 1];
        for (j, v) in [1.0, 1.0, 2.0, 3.0, 4.0, 5.0].into_iter().enumerate() {
            if j <= p {
                beta[j] = v;
            }
        }
        beta
    }

    pub fn new(
        id: impl Into<String>,
        model: ModelKind,
        noise: NoiseFamily,
        p: usize,
        n_total: usize,
        m: usize,
    ) -> Result<Self> {
        let d = Self {
            id: id.into(),
            model,
            noise,
            noise_scale: 1.0,
            p,
            n_total,
            m,
            beta_true: Self::default_beta(p),
            rho: 0.5,
            tau: 0.5,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(DpqrError::InvalidParameter("p must be >= 1".into()));
        }
        if self.beta_true.len() != self.p + 1 {
            return Err(DpqrError::DimensionMismatch {
                expected: self.p + 1,
                got: self.beta_true.len(),
            });
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(DpqrError::InvalidParameter(format!("rho must lie in (-1,1), got {}", self.rho)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(DpqrError::InvalidParameter(format!("tau must lie in (0,1), got {}", self.tau)));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(DpqrError::InvalidParameter("noise_scale must be nonnegative".into()));
        }
        if self.m == 0 || self.n_total % self.m != 0 {
            return Err(DpqrError::UnevenPartition { n: self.n_total, m: self.m });
        }
        Ok(())
    }

    pub fn n_local(&self) -> usize {
        self.n_total / self.m
    }
}

/// Draws a dataset from the design. The noise is recentered so that its
/// tau-quantile is zero, which keeps `beta_true` the true tau-coefficient
/// vector away from the median.
pub fn generate(design: &SimDesign, rng: &mut RngStream) -> Result<Dataset> {
    design.validate()?;
    let n = design.n_total;
    let p = design.p;
    let shift = if design.tau == 0.5 { 0.0 } else { design.noise.quantile(design.tau) };
    let ar_scale = (1.0 - design.rho * design.rho).sqrt();
    let mut x = ndarray::Array2::<f64>::zeros((n, p + 1));
    let mut y = ndarray::Array1::<f64>::zeros(n);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        // AR(1) recursion is the Cholesky factor of the Toeplitz covariance
        let mut prev = rng.standard_normal();
        x[(i, 1)] = prev;
        for j in 2..=p {
            prev = design.rho * prev + ar_scale * rng.standard_normal();
            x[(i, j)] = prev;
        }
        let eps = design.noise_scale * (design.noise.draw(rng) - shift);
        let mut xb = 0.0;
        for j in 0..=p {
            xb += x[(i, j)] * design.beta_true[j];
        }
        y[i] = xb
            + match design.model {
                ModelKind::Homoscedastic => eps,
                ModelKind::Heteroscedastic => (1.0 + 0.4 * x[(i, 1)]) * eps,
            };
    }
    Dataset::new(x, y)
}

/// Euclidean distance between an estimate and the truth.
pub fn l2_error(estimate: &[f64], beta_true: &[f64]) -> Result<f64> {
    if estimate.len() != beta_true.len() {
        return Err(DpqrError::DimensionMismatch { expected: beta_true.len(), got: estimate.len() });
    }
    Ok(estimate
        .iter()
        .zip(beta_true)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Inference-stage knobs.
#[derive(Debug, Clone)]
pub struct InferenceSettings {
    pub alpha: f64,
    pub b1: f64,
    pub b2: f64,
    /// Coordinates to report intervals and studentized statistics for.
    pub coordinates: Vec<usize>,
    pub c_gamma: f64,
    pub gamma_override: Option<f64>,
    pub local_bandwidth_override: Option<f64>,
    pub clime_objective: ClimeObjective,
    pub dp_enabled: bool,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            b1: 1.0,
            b2: 1.0,
            coordinates: vec![1],
            c_gamma: 0.05,
            gamma_override: None,
            local_bandwidth_override: None,
            clime_objective: ClimeObjective::L1,
            dp_enabled: true,
        }
    }
}

/// Bootstrap-stage knobs.
#[derive(Debug, Clone)]
pub struct BootstrapSettings {
    pub replicates: usize,
    pub machine_threshold: usize,
    pub alpha: f64,
    pub b3: f64,
    pub variant: VariantChoice,
    pub budget_mode: BudgetMode,
    pub dp_enabled: bool,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self {
            replicates: 2000,
            machine_threshold: 30,
            alpha: 0.05,
            b3: 10.0,
            variant: VariantChoice::Auto,
            budget_mode: BudgetMode::Split,
            dp_enabled: true,
        }
    }
}

/// Pipeline configuration shared by every replicate of a study.
#[derive(Debug, Clone)]
pub struct StudySettings {
    pub sparsity: usize,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub eta: EtaMode,
    pub feasibility: f64,
    pub clip: f64,
    pub dp_enabled: bool,
    pub budget_mode: BudgetMode,
    pub protect_intercept: bool,
    pub method: RegressionMethod,
    pub kernel_family: KernelFamily,
    pub density_floor: f64,
    pub bandwidth_override: Option<f64>,
    pub init_outer: usize,
    pub init_inner: usize,
    pub inference: Option<InferenceSettings>,
    pub bootstrap: Option<BootstrapSettings>,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            sparsity: 5,
            outer_iters: 10,
            inner_iters: 10,
            eta: EtaMode::Auto { scale: 1.0 },
            feasibility: 10.0,
            clip: 5.0,
            dp_enabled: true,
            budget_mode: BudgetMode::PerCall,
            protect_intercept: true,
            method: RegressionMethod::Quantile,
            kernel_family: KernelFamily::Gaussian,
            density_floor: DEFAULT_DENSITY_FLOOR,
            bandwidth_override: None,
            init_outer: 15,
            init_inner: 30,
            inference: None,
            bootstrap: None,
        }
    }
}

impl StudySettings {
    pub fn estimation_config(
        &self,
        design: &SimDesign,
        budget: PrivacyBudget,
    ) -> Result<EstimationConfig> {
        let h = self
            .bandwidth_override
            .unwrap_or_else(|| default_bandwidth(design.p, design.n_total));
        Ok(EstimationConfig {
            quantile: QuantileSpec::new(design.tau)?,
            kernel: KernelSpec::new(self.kernel_family, h, self.density_floor)?,
            sparsity: self.sparsity,
            outer_iters: self.outer_iters,
            inner_iters: self.inner_iters,
            eta: self.eta,
            feasibility: self.feasibility,
            clip: self.clip,
            budget,
            dp_enabled: self.dp_enabled,
            budget_mode: self.budget_mode,
            protect_intercept: self.protect_intercept,
            method: self.method,
            init_outer: self.init_outer,
            init_inner: self.init_inner,
        })
    }
}

/// Everything one replicate produced.
#[derive(Debug)]
pub struct ReplicateOutput {
    pub l2: f64,
    pub estimate: SparseEstimate,
    pub intervals: Vec<IntervalReport>,
    /// `(coordinate, covered, z)` per requested coordinate.
    pub coordinate_stats: Vec<(usize, bool, f64)>,
    pub bootstrap_all_covered: Option<bool>,
    pub bootstrap_mean_width: Option<f64>,
    pub ledgers: Vec<(String, String)>,
    pub secs: f64,
}

/// Pipeline pieces shared by later stages of a replicate.
pub struct ReplicateContext {
    pub data: Dataset,
    pub plan: ShardPlan,
    pub outcome: EstimationOutcome,
    pub budget: PrivacyBudget,
}

pub fn replicate_seed(master_seed: u64, design_id: &str, rep: usize) -> u64 {
    derive_seed(master_seed, &[design_key(design_id), rep as u64])
}

fn design_key(id: &str) -> u64 {
    // FNV-1a
    let mut hash = 0xcbf29ce484222325u64;
    for b in id.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Runs estimation for one replicate. Data and mechanism streams depend only
/// on `(master_seed, design id, rep)`, never on the privacy level.
pub fn run_estimation(
    design: &SimDesign,
    settings: &StudySettings,
    budget: PrivacyBudget,
    master_seed: u64,
    rep: usize,
    ledger: Option<&BudgetLedger>,
) -> Result<ReplicateContext> {
    let seed = replicate_seed(master_seed, &design.id, rep);
    let mut data_rng = RngStream::new(seed, streams::DATA);
    let data = generate(design, &mut data_rng)?;
    let mut part_rng = RngStream::new(seed, streams::PARTITION);
    let plan = partition(&data, design.m, &mut part_rng)?;
    let cfg = settings.estimation_config(design, budget)?;
    let mut coord_rng = RngStream::new(seed, streams::COORDINATOR);
    let outcome = dp_sparse_estimate(&data, &plan, &cfg, None, &mut coord_rng, ledger)?;
    Ok(ReplicateContext { data, plan, outcome, budget })
}

/// The precision / debias / interval stage.
pub struct InferenceArtifacts {
    pub precision: PrecisionEstimate,
    pub debiased: DebiasedEstimate,
}

pub fn run_inference(
    ctx: &ReplicateContext,
    design: &SimDesign,
    settings: &InferenceSettings,
    master_seed: u64,
    rep: usize,
    precision_ledger: Option<&BudgetLedger>,
    debias_ledger: Option<&BudgetLedger>,
) -> Result<InferenceArtifacts> {
    let seed = replicate_seed(master_seed, &design.id, rep);
    let n_local = ctx.plan.n_local;
    let b = settings
        .local_bandwidth_override
        .unwrap_or_else(|| default_bandwidth(design.p, n_local));
    let kernel = KernelSpec::new(KernelFamily::Gaussian, b, 0.0)?;
    let central = Shard::new(&ctx.data, &ctx.plan, 0);
    let mut prec_rng = RngStream::new(seed, streams::PRECISION);
    let cov = noisy_pseudo_covariance(
        &central,
        &ctx.outcome.penultimate.values,
        &kernel,
        ctx.budget,
        settings.b1,
        settings.dp_enabled,
        &mut prec_rng,
        precision_ledger,
    )?;
    let gamma = settings.gamma_override.unwrap_or_else(|| {
        choose_gamma(
            n_local,
            design.n_total,
            design.p,
            b,
            if settings.dp_enabled { Some(ctx.budget) } else { None },
            settings.c_gamma,
        )
    });
    let precision = clime_solve(&cov.matrix, gamma, settings.clime_objective)?;

    let mut debias_rng = RngStream::new(seed, streams::DEBIAS);
    let debiased = debias(
        &ctx.outcome.estimate,
        &precision,
        &ctx.data,
        &ctx.plan,
        QuantileSpec::new(design.tau)?,
        ctx.budget,
        settings.b2,
        settings.dp_enabled,
        ctx.outcome.traces.last().map_or(0, |t| t.outer_t as usize),
        &mut debias_rng,
        debias_ledger,
    )?;
    Ok(InferenceArtifacts { precision, debiased })
}

/// Runs a full replicate: estimation, then optional inference and bootstrap.
pub fn run_replicate(
    design: &SimDesign,
    settings: &StudySettings,
    budget: PrivacyBudget,
    master_seed: u64,
    rep: usize,
) -> Result<ReplicateOutput> {
    let start = Instant::now();
    let mut ledgers: Vec<(String, String)> = Vec::new();

    let est_ledger = BudgetLedger::new(budget);
    let ctx = run_estimation(design, settings, budget, master_seed, rep, Some(&est_ledger))?;
    let l2 = l2_error(&ctx.outcome.estimate.values, &design.beta_true)?;
    ledgers.push(("estimate".into(), est_ledger.to_string()));

    let mut intervals = Vec::new();
    let mut coordinate_stats = Vec::new();
    let mut bootstrap_all_covered = None;
    let mut bootstrap_mean_width = None;

    if let Some(inf) = &settings.inference {
        let prec_ledger = BudgetLedger::new(budget);
        let deb_ledger = BudgetLedger::new(budget);
        let art = run_inference(
            &ctx,
            design,
            inf,
            master_seed,
            rep,
            Some(&prec_ledger),
            Some(&deb_ledger),
        )?;
        let q = QuantileSpec::new(design.tau)?;
        for &j in &inf.coordinates {
            let report = coordinate_ci(
                &art.debiased,
                &art.precision,
                &ctx.data,
                &ctx.plan,
                j,
                inf.alpha,
                q,
                budget,
                inf.b2,
                inf.dp_enabled,
            )?;
            let truth = design.beta_true[j];
            let covered = report.covers(truth);
            let z = standardized_statistic(
                &art.debiased,
                &art.precision,
                &ctx.data,
                &ctx.plan,
                j,
                q,
                budget,
                inf.b2,
                inf.dp_enabled,
                truth,
            )?;
            coordinate_stats.push((j, covered, z));
            intervals.push(report);
        }
        ledgers.push(("precision".into(), prec_ledger.to_string()));
        ledgers.push(("debias".into(), deb_ledger.to_string()));

        if let Some(boot) = &settings.bootstrap {
            let boot_ledger = BudgetLedger::new(budget);
            let seed = replicate_seed(master_seed, &design.id, rep);
            let cfg = BootstrapConfig {
                replicates: boot.replicates,
                machine_threshold: boot.machine_threshold,
                alpha: boot.alpha,
                budget,
                b3: boot.b3,
                dp_enabled: boot.dp_enabled,
                budget_mode: boot.budget_mode,
                variant: boot.variant,
                seed,
            };
            let quant = private_bootstrap(
                &ctx.data,
                &ctx.plan,
                &ctx.outcome.estimate,
                &art.precision,
                q,
                &cfg,
                Some(&boot_ledger),
            )?;
            let cis = simultaneous_cis(&art.debiased, &quant, design.n_total);
            let all = cis
                .iter()
                .enumerate()
                .all(|(j, ci)| ci.covers(design.beta_true[j]));
            let mean_width =
                cis.iter().map(|ci| ci.width()).sum::<f64>() / cis.len() as f64;
            bootstrap_all_covered = Some(all);
            bootstrap_mean_width = Some(mean_width);
            intervals.extend(cis);
            ledgers.push(("bootstrap".into(), boot_ledger.to_string()));
        }
    }

    Ok(ReplicateOutput {
        l2,
        estimate: ctx.outcome.estimate,
        intervals,
        coordinate_stats,
        bootstrap_all_covered,
        bootstrap_mean_width,
        ledgers,
        secs: start.elapsed().as_secs_f64(),
    })
}

/// One raw result row of an experiment grid.
#[derive(Debug, Clone)]
pub struct MetricRow {
    pub design: String,
    pub model: String,
    pub noise: String,
    pub p: usize,
    pub n_total: usize,
    pub n_local: usize,
    pub m: usize,
    pub eps: f64,
    pub delta: f64,
    pub rep: usize,
    pub seed: u64,
    pub l2: f64,
    pub cov_j1: Option<bool>,
    pub cov_j100: Option<bool>,
    pub width_mean: Option<f64>,
    pub secs: f64,
    pub error: Option<String>,
}

/// A design paired with a privacy level.
#[derive(Debug, Clone)]
pub struct ExperimentCell {
    pub design: SimDesign,
    pub budget: PrivacyBudget,
}

impl ExperimentCell {
    pub fn key(&self) -> String {
        format!("{}/eps={}", self.design.id, self.budget.epsilon)
    }
}

/// Runs `reps` seeded replicates for every cell. A failed replicate records
/// an error row and the grid continues.
pub fn run_experiment(
    cells: &[ExperimentCell],
    settings: &StudySettings,
    reps: usize,
    master_seed: u64,
) -> Vec<MetricRow> {
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..reps).map(move |r| (c, r)))
        .collect();
    let mut rows: Vec<((usize, usize), MetricRow)> = jobs
        .into_par_iter()
        .map(|(c, r)| {
            let cell = &cells[c];
            let design = &cell.design;
            let seed = replicate_seed(master_seed, &design.id, r);
            let row = match run_replicate(design, settings, cell.budget, master_seed, r) {
                Ok(out) => {
                    let take = |j: usize| {
                        out.coordinate_stats
                            .iter()
                            .find(|(c, _, _)| *c == j)
                            .map(|(_, cov, _)| *cov)
                    };
                    MetricRow {
                        design: design.id.clone(),
                        model: design.model.name().into(),
                        noise: design.noise.name().into(),
                        p: design.p,
                        n_total: design.n_total,
                        n_local: design.n_local(),
                        m: design.m,
                        eps: cell.budget.epsilon,
                        delta: cell.budget.delta,
                        rep: r,
                        seed,
                        l2: out.l2,
                        cov_j1: take(1),
                        cov_j100: take(100),
                        width_mean: out.bootstrap_mean_width.or_else(|| {
                            if out.intervals.is_empty() {
                                None
                            } else {
                                Some(
                                    out.intervals.iter().map(|i| i.width()).sum::<f64>()
                                        / out.intervals.len() as f64,
                                )
                            }
                        }),
                        secs: out.secs,
                        error: None,
                    }
                }
                Err(e) => MetricRow {
                    design: design.id.clone(),
                    model: design.model.name().into(),
                    noise: design.noise.name().into(),
                    p: design.p,
                    n_total: design.n_total,
                    n_local: design.n_local(),
                    m: design.m,
                    eps: cell.budget.epsilon,
                    delta: cell.budget.delta,
                    rep: r,
                    seed,
                    l2: f64::NAN,
                    cov_j1: None,
                    cov_j100: None,
                    width_mean: None,
                    secs: 0.0,
                    error: Some(e.to_string()),
                },
            };
            ((c, r), row)
        })
        .collect();
    rows.sort_by_key(|((c, r), _)| (*c, *r));
    rows.into_iter().map(|(_, row)| row).collect()
}

/// Mean/std aggregate of the l2 errors per cell, two-pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub cell: String,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

pub fn aggregate(rows: &[MetricRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<String> = Vec::new();
    for r in rows {
        let key = format!("{}/eps={}", r.design, r.eps);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|key| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| format!("{}/eps={}", r.design, r.eps) == key && r.error.is_none())
                .map(|r| r.l2)
                .collect();
            let (mean, std) = mean_std(&vals);
            AggregateRow { cell: key, mean, std, count: vals.len() }
        })
        .collect()
}

/// Two-pass sample mean and standard deviation.
pub fn mean_std(vals: &[f64]) -> (f64, f64) {
    if vals.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() == 1 {
        return (mean, 0.0);
    }
    let ss = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}
