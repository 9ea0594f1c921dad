//! Sensitivity-calibrated noise mechanisms and the private top-s selector.
//!
//! All mechanisms are pure given an explicit [`RngStream`]; budget accounting
//! happens at the call site against a [`crate::budget::BudgetLedger`], which
//! keeps the mechanisms safe for concurrent use with distinct streams.

use crate::budget::PrivacyBudget;
use crate::error::{DpqrError, Result};
use crate::sampling::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    Laplace,
    Gaussian,
}

/// Noise specification: which mechanism, the l1 (Laplace) or l2 (Gaussian)
/// sensitivity of the released statistic, and the budget to spend.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    pub mechanism: Mechanism,
    pub sensitivity: f64,
    pub budget: PrivacyBudget,
}

impl NoiseSpec {
    pub fn new(mechanism: Mechanism, sensitivity: f64, budget: PrivacyBudget) -> Result<Self> {
        if !(sensitivity >= 0.0) || !sensitivity.is_finite() {
            return Err(DpqrError::InvalidParameter(format!(
                "sensitivity must be nonnegative and finite, got {sensitivity}"
            )));
        }
        Ok(Self { mechanism, sensitivity, budget })
    }
}

/// Laplace noise scale `b = sensitivity / epsilon`.
pub fn laplace_scale(spec: &NoiseSpec) -> f64 {
    spec.sensitivity / spec.budget.epsilon
}

/// Gaussian noise sd `sigma = sqrt(2 ln(1.25/delta)) * sensitivity / epsilon`.
pub fn gaussian_sigma(spec: &NoiseSpec) -> Result<f64> {
    if spec.budget.delta == 0.0 {
        return Err(DpqrError::GaussianNeedsDelta);
    }
    Ok((2.0 * (1.25 / spec.budget.delta).ln()).sqrt() * spec.sensitivity / spec.budget.epsilon)
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(DpqrError::RejectedInput(format!("non-finite entries in {what}")));
    }
    Ok(())
}

/// Adds iid Laplace(0, sensitivity/epsilon) noise to `v`.
pub fn laplace_mechanism(v: &[f64], spec: &NoiseSpec, rng: &mut RngStream) -> Result<Vec<f64>> {
    if spec.mechanism != Mechanism::Laplace {
        return Err(DpqrError::InvalidParameter("spec.mechanism must be laplace".into()));
    }
    check_finite(v, "laplace_mechanism input")?;
    let b = laplace_scale(spec);
    Ok(v.iter().map(|&x| x + rng.laplace(b)).collect())
}

/// Adds iid N(0, sigma^2) noise to `v` with the Gaussian-mechanism sigma.
pub fn gaussian_mechanism(v: &[f64], spec: &NoiseSpec, rng: &mut RngStream) -> Result<Vec<f64>> {
    if spec.mechanism != Mechanism::Gaussian {
        return Err(DpqrError::InvalidParameter("spec.mechanism must be gaussian".into()));
    }
    check_finite(v, "gaussian_mechanism input")?;
    let sigma = gaussian_sigma(spec)?;
    Ok(v.iter().map(|&x| x + rng.normal(sigma)).collect())
}

/// Projects each entry onto `[-r, r]`: `sign(v_i) * min(|v_i|, r)`.
pub fn truncate(v: &[f64], r: f64) -> Result<Vec<f64>> {
    if !(r > 0.0) {
        return Err(DpqrError::InvalidParameter(format!("truncation radius must be positive, got {r}")));
    }
    Ok(v.iter().map(|&x| x.clamp(-r, r)).collect())
}

/// Output of the private top-s selector: a full-length vector that is zero off
/// the selected support.
#[derive(Debug, Clone)]
pub struct SparseSelection {
    pub values: Vec<f64>,
    /// Selected positions in the order they were peeled.
    pub support: Vec<usize>,
}

/// Laplace peeling noise scale `lambda * 2 sqrt(3 s log(1/delta)) / epsilon`.
pub fn peeling_scale(s: usize, budget: PrivacyBudget, lambda: f64) -> f64 {
    lambda * 2.0 * (3.0 * s as f64 * (1.0 / budget.delta).ln()).sqrt() / budget.epsilon
}

/// Private top-s selection by peeling.
///
/// Runs `s` rounds; each round adds fresh iid Laplace noise to `|v_j|` over
/// the not-yet-selected coordinates and picks the argmax (lowest index wins
/// ties, so `lambda = 0` reduces to exact top-s by magnitude). The output
/// keeps the raw selected entries plus one more round of Laplace noise on the
/// selected support, zeros elsewhere.
pub fn noisy_hard_threshold(
    v: &[f64],
    s: usize,
    budget: PrivacyBudget,
    lambda: f64,
    rng: &mut RngStream,
) -> Result<SparseSelection> {
    let p = v.len();
    if s == 0 || s > p {
        return Err(DpqrError::RejectedInput(format!(
            "sparsity s = {s} must satisfy 1 <= s <= {p}"
        )));
    }
    check_finite(v, "noisy_hard_threshold input")?;
    if !(lambda >= 0.0) {
        return Err(DpqrError::InvalidParameter(format!("lambda must be nonnegative, got {lambda}")));
    }
    let scale = if lambda == 0.0 { 0.0 } else { peeling_scale(s, budget, lambda) };

    let mut selected = vec![false; p];
    let mut support = Vec::with_capacity(s);
    for _ in 0..s {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..p {
            if selected[j] {
                continue;
            }
            let score = v[j].abs() + rng.laplace(scale);
            // strict > keeps the lowest index on exact ties
            if best.map_or(true, |(_, b)| score > b) {
                best = Some((j, score));
            }
        }
        let (j, _) = best.expect("s <= p guarantees a candidate");
        selected[j] = true;
        support.push(j);
    }

    let mut values = vec![0.0; p];
    for &j in &support {
        values[j] = v[j] + rng.laplace(scale);
    }
    Ok(SparseSelection { values, support })
}
