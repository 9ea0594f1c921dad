//! Inference calibration: coverage and studentized-statistic normality at
//! the benchmark design. Run: cargo run --release -p dpqr --example calibrate_infer [reps] [c_gamma]

use dpqr::budget::PrivacyBudget;
use dpqr::sim::*;
use statrs::distribution::{ContinuousCDF, Normal};
use std::time::Instant;

fn ks_distance(sample: &mut [f64]) -> f64 {
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sample.len() as f64;
    let phi = Normal::new(0.0, 1.0).unwrap();
    let mut d: f64 = 0.0;
    for (i, &x) in sample.iter().enumerate() {
        let cdf = phi.cdf(x);
        d = d.max(((i + 1) as f64 / n - cdf).abs());
        d = d.max((cdf - i as f64 / n).abs());
    }
    d
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let reps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let c_gamma: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let b_override: Option<f64> = args.get(3).and_then(|s| s.parse().ok());

    let design =
        SimDesign::new("cal-infer", ModelKind::Homoscedastic, NoiseFamily::Normal, 100, 10_000, 20)
            .unwrap();
    let budget = PrivacyBudget::new(1.0, 1e-4).unwrap();
    let mut settings = StudySettings::default();
    settings.inference = Some(InferenceSettings {
        coordinates: vec![1, 100],
        c_gamma,
        local_bandwidth_override: b_override,
        ..Default::default()
    });

    let mut cov1 = 0usize;
    let mut cov100 = 0usize;
    let mut z1 = Vec::new();
    let mut z100 = Vec::new();
    let start = Instant::now();
    for r in 0..reps {
        let out = run_replicate(&design, &settings, budget, 777, r).unwrap();
        for (j, covered, z) in &out.coordinate_stats {
            if *j == 1 {
                cov1 += *covered as usize;
                z1.push(*z);
            } else {
                cov100 += *covered as usize;
                z100.push(*z);
            }
        }
        if r == 0 {
            println!("first replicate: l2={:.4} secs={:.2}", out.l2, out.secs);
        }
    }
    println!(
        "c_gamma={c_gamma} reps={reps}: cov_j1={:.3} cov_j100={:.3} var(z1)={:.3} var(z100)={:.3} ks1={:.3} ks100={:.3} secs/rep={:.2}",
        cov1 as f64 / reps as f64,
        cov100 as f64 / reps as f64,
        z1.iter().map(|z| z * z).sum::<f64>() / reps as f64,
        z100.iter().map(|z| z * z).sum::<f64>() / reps as f64,
        ks_distance(&mut z1),
        ks_distance(&mut z100),
        start.elapsed().as_secs_f64() / reps as f64
    );
}
