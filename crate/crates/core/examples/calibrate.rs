//! Calibration sweeps for the estimation pipeline. Not part of the test
//! suite; run manually with `cargo run --release -p dpqr --example calibrate`.

use dpqr::budget::PrivacyBudget;
use dpqr::sim::*;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("fast");
    match mode {
        "fast" => sweep(200, 8000, 16, 30),
        "full" => sweep(500, 20_000, 40, 20),
        "t3" => sweep_noise(NoiseFamily::T3, 200, 20_000, 40, 10),
        "cauchy" => sweep_noise(NoiseFamily::Cauchy, 200, 20_000, 40, 10),
        other => eprintln!("unknown mode {other}"),
    }
}

fn sweep(p: usize, n: usize, m: usize, reps: usize) {
    sweep_noise(NoiseFamily::Normal, p, n, m, reps)
}

fn sweep_noise(noise: NoiseFamily, p: usize, n: usize, m: usize, reps: usize) {
    let settings = StudySettings::default();
    println!("design p={p} N={n} m={m} noise={} reps={reps}", noise.name());
    println!("settings: s={} T={} K={} budget_mode={:?}", settings.sparsity, settings.outer_iters, settings.inner_iters, settings.budget_mode);
    for eps in [0.1, 0.2, 0.5, 0.7, 1.0] {
        let design = SimDesign::new(
            format!("cal-{}-{p}-{n}", noise.name()),
            ModelKind::Homoscedastic,
            noise,
            p,
            n,
            m,
        )
        .unwrap();
        let budget = PrivacyBudget::new(eps, 1.0 / n as f64).unwrap();
        let start = Instant::now();
        let cells = vec![ExperimentCell { design, budget }];
        let rows = run_experiment(&cells, &settings, reps, 12345);
        let agg = aggregate(&rows);
        let errors: usize = rows.iter().filter(|r| r.error.is_some()).count();
        println!(
            "eps={eps}: mean={:.4} std={:.4} count={} failed={errors} secs/rep={:.2}",
            agg[0].mean,
            agg[0].std,
            agg[0].count,
            start.elapsed().as_secs_f64() / reps as f64
        );
    }
}
