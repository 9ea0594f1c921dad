//! Micro-benchmark of one noisy-covariance + column-solve stage at the
//! inference benchmark scale.

use dpqr::budget::PrivacyBudget;
use dpqr::data::{partition, Shard};
use dpqr::kernel::{default_bandwidth, KernelFamily, KernelSpec};
use dpqr::precision::{choose_gamma, clime_solve, noisy_pseudo_covariance, ClimeObjective};
use dpqr::sampling::{streams, RngStream};
use dpqr::sim::{generate, ModelKind, NoiseFamily, SimDesign};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let c_gamma: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let design =
        SimDesign::new("bench", ModelKind::Homoscedastic, NoiseFamily::Normal, 100, 10_000, 20)
            .unwrap();
    let mut rng = RngStream::new(1, streams::DATA);
    let data = generate(&design, &mut rng).unwrap();
    let mut prng = RngStream::new(1, streams::PARTITION);
    let plan = partition(&data, design.m, &mut prng).unwrap();
    let central = Shard::new(&data, &plan, 0);
    let b = default_bandwidth(design.p, plan.n_local);
    let kernel = KernelSpec::new(KernelFamily::Gaussian, b, 0.0).unwrap();
    let budget = PrivacyBudget::new(1.0, 1e-4).unwrap();
    let beta = design.beta_true.clone();
    let mut prec_rng = RngStream::new(2, streams::PRECISION);
    let cov = noisy_pseudo_covariance(
        &central, &beta, &kernel, budget, 1.0, true, &mut prec_rng, None,
    )
    .unwrap();
    let gamma = choose_gamma(plan.n_local, design.n_total, design.p, b, Some(budget), c_gamma);
    println!("gamma = {gamma:.4}, noise sigma = {:.4}", cov.noise_sigma);
    let start = Instant::now();
    let est = clime_solve(&cov.matrix, gamma, ClimeObjective::L1).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let nnz: usize = (0..est.w.nrows())
        .map(|j| (0..est.w.ncols()).filter(|&k| est.w[(j, k)].abs() > 1e-9).count())
        .sum();
    println!(
        "clime: {elapsed:.2}s, mean nnz/row = {:.1}, violation = {:.4}",
        nnz as f64 / est.w.nrows() as f64,
        est.column_violation
    );
}
