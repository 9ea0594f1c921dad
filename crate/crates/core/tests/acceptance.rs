//! Acceptance suite: one test per shipping criterion, each printing a
//! PASS/FAIL line (visible with `--nocapture`).
//!
//! The benchmark-scale reproduction (criterion 1) defaults to its sanctioned
//! fast variant; set `DPQR_ACCEPTANCE_FULL=1` to run the full-size table
//! cells (tens of minutes). Everything is seeded and deterministic.

use dpqr::bootstrap::{order_statistic, BootstrapVariant, VariantChoice};
use dpqr::budget::{BudgetLedger, PrivacyBudget};
use dpqr::engine::{BudgetMode, RegressionMethod};
use dpqr::mechanisms::noisy_hard_threshold;
use dpqr::precision::{clime_columns, ClimeObjective};
use dpqr::sampling::{derive_seed, RngStream};
use dpqr::sim::*;
use ndarray::Array2;
use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::OnceLock;

const MASTER_SEED: u64 = 20_260_809;

fn fast_design(model: ModelKind, noise: NoiseFamily) -> SimDesign {
    SimDesign::new(
        format!("acc-{}-{}", model.name(), noise.name()),
        model,
        noise,
        200,
        8000,
        16,
    )
    .unwrap()
}

fn budget(eps: f64, n_total: usize) -> PrivacyBudget {
    PrivacyBudget::new(eps, 1.0 / n_total as f64).unwrap()
}

fn mean_l2(design: &SimDesign, settings: &StudySettings, eps: f64, reps: usize) -> (f64, f64) {
    let cells = vec![ExperimentCell {
        design: design.clone(),
        budget: budget(eps, design.n_total),
    }];
    let rows = run_experiment(&cells, settings, reps, MASTER_SEED);
    let failed: Vec<_> = rows.iter().filter(|r| r.error.is_some()).collect();
    assert!(failed.is_empty(), "replicates failed: {:?}", failed[0].error);
    let agg = aggregate(&rows);
    (agg[0].mean, agg[0].std)
}

#[test]
fn criterion_1_table_reproduction() {
    let full = std::env::var("DPQR_ACCEPTANCE_FULL").is_ok();
    let settings = StudySettings::default(); // s=5, T=K=10, per-call budget
    if full {
        let design = SimDesign::new(
            "acc-table1",
            ModelKind::Homoscedastic,
            NoiseFamily::Normal,
            500,
            20_000,
            40,
        )
        .unwrap();
        let (m_05, s_05) = mean_l2(&design, &settings, 0.5, 100);
        let (m_10, s_10) = mean_l2(&design, &settings, 1.0, 100);
        // within two reported standard deviations of the benchmark cells
        let ok_05 = (m_05 - 0.074).abs() <= 2.0 * 0.023;
        let ok_10 = (m_10 - 0.049).abs() <= 2.0 * 0.016;
        println!(
            "criterion 1 (full) {}: eps=0.5 mean {m_05:.4} ({s_05:.4}) vs 0.074+-0.046; \
             eps=1 mean {m_10:.4} ({s_10:.4}) vs 0.049+-0.032",
            if ok_05 && ok_10 { "PASS" } else { "FAIL" }
        );
        assert!(ok_05, "eps=0.5 mean {m_05} outside 0.074 +- 0.046");
        assert!(ok_10, "eps=1 mean {m_10} outside 0.049 +- 0.032");
    } else {
        let design = fast_design(ModelKind::Homoscedastic, NoiseFamily::Normal);
        let (m_05, s_05) = mean_l2(&design, &settings, 0.5, 30);
        let (m_10, s_10) = mean_l2(&design, &settings, 1.0, 30);
        let ok = m_10 < m_05;
        println!(
            "criterion 1 (fast) {}: eps=0.5 mean {m_05:.4} ({s_05:.4}) > eps=1 mean {m_10:.4} ({s_10:.4})",
            if ok { "PASS" } else { "FAIL" }
        );
        assert!(ok, "fast mode must preserve the privacy/accuracy ordering");
    }
}

#[test]
fn criterion_2_privacy_accuracy_monotonicity() {
    let design = fast_design(ModelKind::Homoscedastic, NoiseFamily::Normal);
    let settings = StudySettings::default();
    let grid = [0.1, 0.2, 0.5, 0.7, 1.0];
    let means: Vec<f64> = grid
        .iter()
        .map(|&eps| mean_l2(&design, &settings, eps, 30).0)
        .collect();
    let ok = means.windows(2).all(|w| w[0] > w[1]);
    println!(
        "criterion 2 {}: means over eps {:?} = {:?}",
        if ok { "PASS" } else { "FAIL" },
        grid,
        means.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>()
    );
    assert!(ok, "mean error must strictly decrease in eps: {means:?}");
}

#[test]
fn criterion_3_heavy_tail_robustness() {
    // total sample size pinned at 20000 with local size 500
    let design = SimDesign::new(
        "acc-cauchy",
        ModelKind::Homoscedastic,
        NoiseFamily::Cauchy,
        200,
        20_000,
        40,
    )
    .unwrap();
    let quantile = StudySettings::default();
    let mut ls = StudySettings::default();
    ls.method = RegressionMethod::LeastSquares;
    ls.clip = 1e6; // nominal-only clip exposes the heavy-tail failure
    let (qm, qs) = mean_l2(&design, &quantile, 1.0, 30);
    let (lm, lsd) = mean_l2(&design, &ls, 1.0, 30);
    let ok = qm < 0.12 && lm >= 2.0 * qm;
    println!(
        "criterion 3 {}: quantile {qm:.4} ({qs:.4}) < 0.12; least-squares {lm:.3} ({lsd:.3}) >= 2x",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(qm < 0.12, "quantile pipeline error {qm} must stay below 0.12");
    assert!(lm >= 2.0 * qm, "least-squares baseline {lm} must exceed 2 x {qm}");
}

/// Shared run for criteria 4 and 5: coverage flags and studentized
/// statistics at the benchmark inference design.
struct InferenceStudy {
    cov1: f64,
    cov100: f64,
    z1: Vec<f64>,
    z100: Vec<f64>,
}

fn inference_study() -> &'static InferenceStudy {
    static STUDY: OnceLock<InferenceStudy> = OnceLock::new();
    STUDY.get_or_init(|| {
        let design = SimDesign::new(
            "acc-infer",
            ModelKind::Homoscedastic,
            NoiseFamily::Normal,
            100,
            10_000,
            20,
        )
        .unwrap();
        let b = budget(1.0, design.n_total);
        let mut settings = StudySettings::default();
        settings.inference = Some(InferenceSettings {
            coordinates: vec![1, 100],
            ..Default::default()
        });
        let reps = 100;
        let mut cov1 = 0;
        let mut cov100 = 0;
        let mut z1 = Vec::with_capacity(reps);
        let mut z100 = Vec::with_capacity(reps);
        for r in 0..reps {
            let out = run_replicate(&design, &settings, b, MASTER_SEED, r)
                .expect("inference replicate");
            for (j, covered, z) in &out.coordinate_stats {
                if *j == 1 {
                    cov1 += *covered as usize;
                    z1.push(*z);
                } else {
                    cov100 += *covered as usize;
                    z100.push(*z);
                }
            }
        }
        InferenceStudy {
            cov1: cov1 as f64 / reps as f64,
            cov100: cov100 as f64 / reps as f64,
            z1,
            z100,
        }
    })
}

#[test]
fn criterion_4_coordinate_ci_coverage() {
    let study = inference_study();
    // +-3 binomial standard errors around the nominal level at 100 replicates
    let se = (0.95f64 * 0.05 / 100.0).sqrt();
    let lo = 0.95 - 3.0 * se;
    let hi = 1.0f64.min(0.95 + 3.0 * se);
    let ok = (lo..=hi).contains(&study.cov1) && (lo..=hi).contains(&study.cov100);
    println!(
        "criterion 4 {}: coverage j=1 {:.3}, j=100 {:.3}, window [{lo:.4}, {hi:.4}]",
        if ok { "PASS" } else { "FAIL" },
        study.cov1,
        study.cov100
    );
    assert!(ok, "coverage ({}, {}) outside [{lo}, {hi}]", study.cov1, study.cov100);
}

fn ks_distance_to_normal(sample: &[f64]) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let phi = Normal::new(0.0, 1.0).unwrap();
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = phi.cdf(x);
        d = d.max(((i + 1) as f64 / n - cdf).abs());
        d = d.max((cdf - i as f64 / n).abs());
    }
    d
}

#[test]
fn criterion_5_standardized_statistic_normality() {
    let study = inference_study();
    let ks1 = ks_distance_to_normal(&study.z1);
    let ks100 = ks_distance_to_normal(&study.z100);
    let ok = ks1 < 0.15 && ks100 < 0.15;
    println!(
        "criterion 5 {}: KS distance signal {ks1:.4}, null {ks100:.4} (limit 0.15)",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ks1 < 0.15, "signal-coordinate KS {ks1} must stay below 0.15");
    assert!(ks100 < 0.15, "null-coordinate KS {ks100} must stay below 0.15");
}

#[test]
fn criterion_6_bootstrap_simultaneous_coverage() {
    let design = SimDesign::new(
        "acc-boot",
        ModelKind::Heteroscedastic,
        NoiseFamily::Cauchy,
        100,
        5000,
        10,
    )
    .unwrap();
    let b = budget(1.0, design.n_total);
    let reps = 100;

    // coverage at the configured privacy level (even per-replicate split)
    let mut settings = StudySettings::default();
    settings.inference = Some(InferenceSettings { coordinates: vec![1], ..Default::default() });
    settings.bootstrap = Some(BootstrapSettings::default());
    let mut covered = 0usize;
    for r in 0..reps {
        let out = run_replicate(&design, &settings, b, MASTER_SEED, r).expect("bootstrap rep");
        covered += out.bootstrap_all_covered.unwrap() as usize;
    }
    let coverage = covered as f64 / reps as f64;

    // width comparison of the two statistics with the selector noise off
    let width_reps = 40;
    let mut widths_k = Vec::new();
    let mut widths_n = Vec::new();
    for r in 0..width_reps {
        for variant in [BootstrapVariant::KGrad, BootstrapVariant::Nk1Grad] {
            let mut s = StudySettings::default();
            s.inference = Some(InferenceSettings { coordinates: vec![1], ..Default::default() });
            s.bootstrap = Some(BootstrapSettings {
                dp_enabled: false,
                variant: VariantChoice::Force(variant),
                ..Default::default()
            });
            let out = run_replicate(&design, &s, b, MASTER_SEED, r).expect("width rep");
            match variant {
                BootstrapVariant::KGrad => widths_k.push(out.bootstrap_mean_width.unwrap()),
                BootstrapVariant::Nk1Grad => widths_n.push(out.bootstrap_mean_width.unwrap()),
            }
        }
    }
    let (wk, _) = mean_std(&widths_k);
    let (wn, _) = mean_std(&widths_n);
    let ok = coverage >= 0.90 && wn <= wk;
    println!(
        "criterion 6 {}: simultaneous coverage {coverage:.3} (>= 0.90); \
         widths (n+k-1)-grad {wn:.4} <= k-grad {wk:.4} at m=10",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(coverage >= 0.90, "simultaneous coverage {coverage} below 0.90");
    assert!(wn <= wk, "(n+k-1)-grad width {wn} must not exceed k-grad width {wk}");
}

#[test]
fn criterion_7_sparsity_sensitivity() {
    let design = fast_design(ModelKind::Heteroscedastic, NoiseFamily::Normal);
    let grid = [5usize, 6, 7, 8, 9, 10, 20, 30, 40, 50];
    let mut means = Vec::new();
    for &s in &grid {
        let mut settings = StudySettings::default();
        settings.sparsity = s;
        let (m, _) = mean_l2(&design, &settings, 1.0, 30);
        means.push(m);
    }
    let m5 = means[0];
    let m10 = means[5];
    let tail = &means[6..]; // s = 20, 30, 40, 50
    let ratio_ok = m10 <= 1.6 * m5;
    let rising = tail.windows(2).all(|w| w[1] > w[0]);
    println!(
        "criterion 7 {}: mean(s=10) {m10:.4} <= 1.6 x mean(s=5) {m5:.4}; rising over s=20..50 {:?}",
        if ratio_ok && rising { "PASS" } else { "FAIL" },
        tail.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>()
    );
    assert!(ratio_ok, "error at s=10 ({m10}) exceeds 1.6 x error at s=5 ({m5})");
    assert!(rising, "error must increase strictly from s=20 to s=50: {tail:?}");
}

#[test]
fn criterion_8_oracle_equivalence_suite() {
    // (a) zero-noise private selection equals exact top-s on 1e4 vectors
    let mut rng = RngStream::new(derive_seed(MASTER_SEED, &[81]), 0);
    let b = PrivacyBudget::new(1.0, 0.05).unwrap();
    for trial in 0..10_000 {
        let p = 2 + (trial % 63);
        let v: Vec<f64> = (0..p).map(|_| rng.laplace(3.0)).collect();
        let s = 1 + (trial % p);
        let mut sel_rng = RngStream::new(trial as u64, 1);
        let sel = noisy_hard_threshold(&v, s, b, 0.0, &mut sel_rng).unwrap();
        let mut got = sel.support.clone();
        got.sort_unstable();
        let mut idx: Vec<usize> = (0..p).collect();
        idx.sort_by(|&a, &c| v[c].abs().partial_cmp(&v[a].abs()).unwrap().then(a.cmp(&c)));
        let mut expect: Vec<usize> = idx.into_iter().take(s).collect();
        expect.sort_unstable();
        assert_eq!(got, expect, "top-s mismatch on trial {trial}");
    }

    // (b) constrained-l1 columns match the active-set enumeration oracle
    for dim in 2..=7 {
        let mut rng = RngStream::new(derive_seed(MASTER_SEED, &[82, dim as u64]), 0);
        let mut d = Array2::<f64>::eye(dim);
        for r in 0..dim {
            for c in r..dim {
                let v = if r == c { 1.0 + 0.5 * rng.uniform() } else { 0.35 * (rng.uniform() - 0.5) };
                d[(r, c)] = v;
                d[(c, r)] = v;
            }
        }
        let gamma = 0.15;
        let columns = clime_columns(&d, gamma, ClimeObjective::L1).unwrap();
        for (j, col) in columns.iter().enumerate() {
            let got: f64 = col.iter().map(|v| v.abs()).sum();
            let oracle = clime_enumeration_oracle(&d, j, gamma)
                .unwrap_or_else(|| panic!("oracle found no solution for column {j}"));
            assert!(
                (got - oracle).abs() < 1e-6,
                "dim {dim} column {j}: simplex {got} vs oracle {oracle}"
            );
        }
    }

    // (c) ledger conservation on a full split-mode pipeline run
    let design = SimDesign::new("acc-ledger", ModelKind::Homoscedastic, NoiseFamily::Normal, 20, 400, 4)
        .unwrap();
    let mut settings = StudySettings::default();
    settings.budget_mode = BudgetMode::Split;
    settings.outer_iters = 3;
    settings.inner_iters = 4;
    settings.inference = Some(InferenceSettings { coordinates: vec![1], ..Default::default() });
    settings.bootstrap = Some(BootstrapSettings { replicates: 25, ..Default::default() });
    let bud = budget(1.0, design.n_total);
    let out = run_replicate(&design, &settings, bud, MASTER_SEED, 0).unwrap();
    assert_eq!(out.ledgers.len(), 4);
    for (stage, text) in &out.ledgers {
        assert!(
            text.contains("accounted=true overspent=false"),
            "stage {stage} not exactly accounted:\n{text}"
        );
    }
    // direct check of the exact recombination arithmetic
    let ledger = BudgetLedger::new(bud);
    let _ = run_estimation(&design, &settings, bud, MASTER_SEED, 0, Some(&ledger)).unwrap();
    assert!(ledger.is_exactly_accounted());

    // (d) fixed-point Monte-Carlo gradient at the truth
    fixed_point_check();

    // (e) quantile order statistics against a full sort
    let mut qrng = RngStream::new(derive_seed(MASTER_SEED, &[83]), 0);
    let sample: Vec<f64> = (0..2000).map(|_| qrng.cauchy()).collect();
    let mut sorted = sample.clone();
    sorted.sort_by(|a, c| a.partial_cmp(c).unwrap());
    for &q in &[0.005f64, 0.025, 0.31, 0.5, 0.975, 0.999] {
        let k = ((q * 2000.0).ceil() as usize).clamp(1, 2000) - 1;
        assert_eq!(order_statistic(&sample, q), sorted[k]);
    }

    println!("criterion 8 PASS: selector/top-s, l1-column/enumeration, ledger, fixed point, order statistics");
}

/// Enumeration oracle for `min |w|_1 s.t. |D w - e_j|_inf <= gamma`: every
/// optimal basic solution activates `dim` conditions among
/// `{w_k = 0}` and `{(D w - e_j)_r = +-gamma}`.
fn clime_enumeration_oracle(d: &Array2<f64>, j: usize, gamma: f64) -> Option<f64> {
    let dim = d.nrows();
    let conditions = 3 * dim; // dim zeros + 2 dim active rows
    let mut best: Option<f64> = None;
    let mut combo: Vec<usize> = (0..dim).collect();
    loop {
        // build the linear system for this active set
        let mut a = vec![vec![0.0; dim + 1]; dim];
        for (row, &cond) in combo.iter().enumerate() {
            if cond < dim {
                a[row][cond] = 1.0; // w_cond = 0
            } else {
                let r = (cond - dim) / 2;
                let sign = if (cond - dim) % 2 == 0 { 1.0 } else { -1.0 };
                for c in 0..dim {
                    a[row][c] = d[(r, c)];
                }
                let e = if r == j { 1.0 } else { 0.0 };
                a[row][dim] = e + sign * gamma;
            }
        }
        if let Some(w) = gauss_solve(&mut a) {
            // feasibility of all rows
            let feasible = (0..dim).all(|r| {
                let mut dr = 0.0;
                for c in 0..dim {
                    dr += d[(r, c)] * w[c];
                }
                let e = if r == j { 1.0 } else { 0.0 };
                (dr - e).abs() <= gamma + 1e-9
            });
            if feasible {
                let obj: f64 = w.iter().map(|v| v.abs()).sum();
                if best.map_or(true, |b| obj < b) {
                    best = Some(obj);
                }
            }
        }
        // next combination
        let mut i = dim;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if combo[i] != i + conditions - dim {
                combo[i] += 1;
                for k in i + 1..dim {
                    combo[k] = combo[k - 1] + 1;
                }
                break;
            }
        }
    }
}

fn gauss_solve(a: &mut [Vec<f64>]) -> Option<Vec<f64>> {
    let n = a.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &k| a[i][c].abs().partial_cmp(&a[k][c].abs()).unwrap())?;
        if a[piv][c].abs() < 1e-10 {
            return None;
        }
        a.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    Some((0..n).map(|i| a[i][n] / a[i][i]).collect())
}

/// At the true coefficients the transformed-LS gradient reduces to the raw
/// check-loss subgradient, whose mean is zero; the Monte-Carlo average must
/// lie within three standard errors coordinatewise.
fn fixed_point_check() {
    use dpqr::kernel::{KernelFamily, KernelSpec};
    use dpqr::transform::{local_gradient, make_pseudo_sample, QuantileSpec};

    let n = 100_000;
    let beta_star = [1.0, -0.5, 0.75];
    let kernel = KernelSpec::new(KernelFamily::Uniform, 1.0, 1e-8).unwrap();
    let tau = QuantileSpec::new(0.5).unwrap();
    let mut rng = RngStream::new(derive_seed(MASTER_SEED, &[84]), 0);
    let mut shard = Vec::with_capacity(n);
    for _ in 0..n {
        let x = vec![1.0, rng.standard_normal(), rng.standard_normal()];
        let xb: f64 = x.iter().zip(&beta_star).map(|(a, c)| a * c).sum();
        let y = xb + rng.standard_normal();
        shard.push(make_pseudo_sample(&x, y, &beta_star, &kernel, tau).unwrap());
    }
    let grad = local_gradient(&shard, &beta_star, f64::INFINITY).unwrap();
    for (k, g) in grad.iter().enumerate() {
        // per-sample terms are (1{e<=0} - 1/2) x: variance x^2/4, so the
        // standard error per coordinate is at most ~ sqrt(E x^2) / (2 sqrt n)
        let se = 0.5 / (n as f64).sqrt() * if k == 0 { 1.0 } else { 1.05 };
        assert!(
            g.abs() <= 3.0 * se,
            "fixed-point gradient coordinate {k}: |{g}| > 3 x {se}"
        );
    }
}

#[test]
fn acceptance_notes() {
    println!(
        "note: criterion 1 full-size cells run with DPQR_ACCEPTANCE_FULL=1; \
         theoretical rate exponents are covered only by the trend checks above"
    );
}
