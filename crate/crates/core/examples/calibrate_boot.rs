//! Bootstrap calibration: simultaneous coverage and variant width comparison
//! at p=100, m=10, n=500. Run: cargo run --release -p dpqr --example calibrate_boot [reps] [c_gamma] [b]

use dpqr::bootstrap::BootstrapVariant;
use dpqr::bootstrap::VariantChoice;
use dpqr::budget::PrivacyBudget;
use dpqr::engine::BudgetMode;
use dpqr::sim::*;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let reps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let c_gamma: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let b_override: Option<f64> = args.get(3).and_then(|s| s.parse().ok());

    let design =
        SimDesign::new("cal-boot", ModelKind::Heteroscedastic, NoiseFamily::Cauchy, 100, 5000, 10)
            .unwrap();
    let budget = PrivacyBudget::new(1.0, 1.0 / 5000.0).unwrap();

    let base_inference = InferenceSettings {
        coordinates: vec![1],
        c_gamma,
        local_bandwidth_override: b_override,
        ..Default::default()
    };

    // coverage run: private bootstrap, auto variant (m=10 < 30 picks nk1)
    let mut covered = 0usize;
    let mut cov_widths = Vec::new();
    let start = Instant::now();
    for r in 0..reps {
        let mut settings = StudySettings::default();
        settings.inference = Some(base_inference.clone());
        settings.bootstrap = Some(BootstrapSettings {
            replicates: 2000,
            dp_enabled: true,
            budget_mode: BudgetMode::Split,
            ..Default::default()
        });
        let out = run_replicate(&design, &settings, budget, 4242, r).unwrap();
        covered += out.bootstrap_all_covered.unwrap() as usize;
        cov_widths.push(out.bootstrap_mean_width.unwrap());
    }
    let (wmean, _) = mean_std(&cov_widths);
    println!(
        "private (split) coverage: {:.3} mean width {:.3} secs/rep {:.2}",
        covered as f64 / reps as f64,
        wmean,
        start.elapsed().as_secs_f64() / reps as f64
    );

    // width comparison at lambda = 0: kgrad vs nk1grad
    let mut w_k = Vec::new();
    let mut w_n = Vec::new();
    let mut cov_k = 0usize;
    let mut cov_n = 0usize;
    for r in 0..reps {
        for variant in [BootstrapVariant::KGrad, BootstrapVariant::Nk1Grad] {
            let mut settings = StudySettings::default();
            settings.inference = Some(base_inference.clone());
            settings.bootstrap = Some(BootstrapSettings {
                replicates: 2000,
                dp_enabled: false,
                variant: VariantChoice::Force(variant),
                ..Default::default()
            });
            let out = run_replicate(&design, &settings, budget, 4242, r).unwrap();
            match variant {
                BootstrapVariant::KGrad => {
                    w_k.push(out.bootstrap_mean_width.unwrap());
                    cov_k += out.bootstrap_all_covered.unwrap() as usize;
                }
                BootstrapVariant::Nk1Grad => {
                    w_n.push(out.bootstrap_mean_width.unwrap());
                    cov_n += out.bootstrap_all_covered.unwrap() as usize;
                }
            }
        }
    }
    let (km, ks) = mean_std(&w_k);
    let (nm, ns) = mean_std(&w_n);
    println!(
        "no-noise widths: kgrad {:.4} ({:.4}) coverage {:.3} | nk1grad {:.4} ({:.4}) coverage {:.3}",
        km,
        ks,
        cov_k as f64 / reps as f64,
        nm,
        ns,
        cov_n as f64 / reps as f64
    );
}
