//! Check loss and the Newton-type least-squares transformation.
//!
//! One Newton-Raphson step on the quantile risk is rewritten as ordinary
//! least squares on kernel-weighted pseudo covariates and responses: with
//! residual `e = y - x'b` and weight `w = H_h(e)`,
//!
//! ```text
//! x~ = sqrt(w) x,    y~ = x~'b - (1{e <= 0} - tau) / sqrt(w).
//! ```
//!
//! The transformed-LS gradient at the linearization point collapses to the
//! raw subgradient `(1{e <= 0} - tau) x`, which is what makes the target
//! coefficient a fixed point of the iteration.

use crate::error::{DpqrError, Result};
use crate::kernel::KernelSpec;

/// A quantile level in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileSpec {
    pub tau: f64,
}

impl QuantileSpec {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(DpqrError::InvalidParameter(format!(
                "quantile level must lie in (0, 1), got {tau}"
            )));
        }
        Ok(Self { tau })
    }
}

/// Check loss `rho_tau(u) = u (tau - 1{u <= 0})`.
pub fn check_loss(u: f64, q: QuantileSpec) -> f64 {
    u * (q.tau - if u <= 0.0 { 1.0 } else { 0.0 })
}

/// A kernel-weighted pseudo sample.
#[derive(Debug, Clone)]
pub struct PseudoSample {
    pub x_tilde: Vec<f64>,
    pub y_tilde: f64,
}

/// Builds the pseudo covariates and response for one observation at the
/// linearization point `beta`.
pub fn make_pseudo_sample(
    x: &[f64],
    y: f64,
    beta: &[f64],
    kernel: &KernelSpec,
    q: QuantileSpec,
) -> Result<PseudoSample> {
    if x.len() != beta.len() {
        return Err(DpqrError::DimensionMismatch { expected: x.len(), got: beta.len() });
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(DpqrError::NonFinite("beta".into()));
    }
    let e = y - dot(x, beta);
    let w = kernel.weight(e);
    if w == 0.0 {
        return Err(DpqrError::DegenerateWeight);
    }
    let sw = w.sqrt();
    let x_tilde: Vec<f64> = x.iter().map(|&xi| sw * xi).collect();
    let indicator = if e <= 0.0 { 1.0 } else { 0.0 };
    let y_tilde = dot(&x_tilde, beta) - (indicator - q.tau) / sw;
    Ok(PseudoSample { x_tilde, y_tilde })
}

/// Average transformed-LS gradient over a shard, with each per-sample term
/// entrywise clipped to `[-clip, clip]` before summation. The clip makes the
/// stated sensitivity of the privatized update hold for arbitrary data.
pub fn local_gradient(shard: &[PseudoSample], beta: &[f64], clip: f64) -> Result<Vec<f64>> {
    if shard.is_empty() {
        return Err(DpqrError::RejectedInput("empty shard in local_gradient".into()));
    }
    let dim = beta.len();
    let mut grad = vec![0.0; dim];
    for sample in shard {
        if sample.x_tilde.len() != dim {
            return Err(DpqrError::DimensionMismatch { expected: dim, got: sample.x_tilde.len() });
        }
        let r = dot(&sample.x_tilde, beta) - sample.y_tilde;
        for (g, &xt) in grad.iter_mut().zip(&sample.x_tilde) {
            *g += (r * xt).clamp(-clip, clip);
        }
    }
    let n = shard.len() as f64;
    for g in &mut grad {
        *g /= n;
    }
    Ok(grad)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{KernelFamily, KernelSpec};
    use crate::sampling::RngStream;
    use approx::assert_abs_diff_eq;

    fn q(tau: f64) -> QuantileSpec {
        QuantileSpec::new(tau).unwrap()
    }

    #[test]
    fn check_loss_examples() {
        assert_eq!(check_loss(2.0, q(0.5)), 1.0);
        assert_eq!(check_loss(-1.0, q(0.25)), 0.75);
        for tau in [0.1, 0.5, 0.9] {
            assert_eq!(check_loss(0.0, q(tau)), 0.0);
        }
    }

    #[test]
    fn check_loss_nonnegative() {
        for tau in [0.1, 0.5, 0.73] {
            for u in [-7.0, -0.1, 0.0, 0.1, 7.0] {
                assert!(check_loss(u, q(tau)) >= 0.0);
            }
        }
    }

    #[test]
    fn check_loss_subgradient_by_finite_differences() {
        // d/du rho_tau(u) = tau - 1{u <= 0} for u != 0.
        let tau = 0.3;
        let eps = 1e-7;
        for u in [-2.0, -0.5, 0.5, 2.0] {
            let fd = (check_loss(u + eps, q(tau)) - check_loss(u - eps, q(tau))) / (2.0 * eps);
            let expected = tau - if u <= 0.0 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(fd, expected, epsilon = 1e-6);
        }
    }

    #[test]
    fn quantile_level_validation() {
        assert!(QuantileSpec::new(0.0).is_err());
        assert!(QuantileSpec::new(1.0).is_err());
        assert!(QuantileSpec::new(0.5).is_ok());
    }

    #[test]
    fn pseudo_sample_hand_example() {
        // uniform kernel h=1, tau=0.5, x=(1), beta=(0), y=0:
        // e=0, w=0.5, x~=sqrt(0.5), y~ = -0.5/sqrt(0.5) = -sqrt(0.5)
        let k = KernelSpec::new(KernelFamily::Uniform, 1.0, 0.0).unwrap();
        let ps = make_pseudo_sample(&[1.0], 0.0, &[0.0], &k, q(0.5)).unwrap();
        assert_abs_diff_eq!(ps.x_tilde[0], 0.5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(ps.y_tilde, -0.5f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn positive_residual_flips_indicator_sign() {
        // tau = 0.5, e > 0: y~ = x~'beta + 0.5/sqrt(w)
        let k = KernelSpec::new(KernelFamily::Gaussian, 1.0, 0.0).unwrap();
        let beta = [0.4, -0.2];
        let x = [1.0, 2.0];
        let y = 10.0; // e = 10 - 0 = well above the fit
        let ps = make_pseudo_sample(&x, y, &beta, &k, q(0.5)).unwrap();
        let e = y - (x[0] * beta[0] + x[1] * beta[1]);
        let w = k.weight(e);
        let expected = dot(&ps.x_tilde, &beta) + 0.5 / w.sqrt();
        assert_abs_diff_eq!(ps.y_tilde, expected, epsilon = 1e-12);
    }

    #[test]
    fn pseudo_covariates_linear_in_x() {
        let k = KernelSpec::new(KernelFamily::Gaussian, 1.0, 0.0).unwrap();
        let beta = [0.0, 0.0];
        let x = [1.0, -2.0];
        let x2 = [2.0, -4.0];
        let a = make_pseudo_sample(&x, 0.7, &beta, &k, q(0.5)).unwrap();
        let b = make_pseudo_sample(&x2, 0.7, &beta, &k, q(0.5)).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(b.x_tilde[i], 2.0 * a.x_tilde[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn degenerate_weight_detected() {
        let k = KernelSpec::new(KernelFamily::Uniform, 1.0, 0.0).unwrap();
        // residual far outside the compact support with no floor
        let r = make_pseudo_sample(&[1.0], 100.0, &[0.0], &k, q(0.5));
        assert!(matches!(r, Err(DpqrError::DegenerateWeight)));
    }

    #[test]
    fn gradient_zero_at_exact_least_squares_solution() {
        // Scalar LS: minimizer of sum (x~ b - y~)^2 gives zero gradient.
        let shard = vec![
            PseudoSample { x_tilde: vec![1.0], y_tilde: 2.0 },
            PseudoSample { x_tilde: vec![2.0], y_tilde: 3.0 },
        ];
        // b* = sum(x y)/sum(x^2) = (2 + 6)/5
        let b = 8.0 / 5.0;
        let g = local_gradient(&shard, &[b], f64::INFINITY).unwrap();
        assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn gradient_single_sample_with_clip() {
        let shard = vec![PseudoSample { x_tilde: vec![1.0, 0.0], y_tilde: 2.0 }];
        let g = local_gradient(&shard, &[0.0, 0.0], f64::INFINITY).unwrap();
        assert_eq!(g, vec![-2.0, 0.0]);
        let g = local_gradient(&shard, &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(g, vec![-1.0, 0.0]);
    }

    #[test]
    fn empty_shard_rejected() {
        assert!(local_gradient(&[], &[0.0], 1.0).is_err());
    }

    #[test]
    fn fixed_point_gradient_vanishes_monte_carlo() {
        // Data from the true model at beta = beta*: the expected transformed
        // gradient is zero, and the per-sample terms reduce to the raw
        // subgradient (1{e <= 0} - tau) x regardless of kernel weights. With
        // n = 1e5 the mean must sit within ~3 empirical standard errors.
        let n = 100_000;
        let p = 4;
        let beta_star = [0.5, -1.0, 2.0, 0.0, 1.0]; // intercept + 4 slopes
        let k = KernelSpec::new(KernelFamily::Uniform, 1.0, 1e-8).unwrap();
        let tau = q(0.5);
        let mut rng = RngStream::new(2028, 0);
        let mut shard = Vec::with_capacity(n);
        let mut raw_terms: Vec<Vec<f64>> = Vec::with_capacity(n);
        for _ in 0..n {
            let mut x = vec![1.0];
            for _ in 0..p {
                x.push(rng.standard_normal());
            }
            let noise = rng.standard_normal(); // median zero matches tau = 0.5
            let y = dot(&x, &beta_star) + noise;
            let ps = make_pseudo_sample(&x, y, &beta_star, &k, tau).unwrap();
            let r = dot(&ps.x_tilde, &beta_star) - ps.y_tilde;
            raw_terms.push(ps.x_tilde.iter().map(|&xt| r * xt).collect());
            shard.push(ps);
        }
        let g = local_gradient(&shard, &beta_star, f64::INFINITY).unwrap();
        for j in 0..=p {
            let mean = g[j];
            let var = raw_terms.iter().map(|t| (t[j] - mean).powi(2)).sum::<f64>() / n as f64;
            let se = (var / n as f64).sqrt();
            assert!(
                mean.abs() <= 3.0 * se.max(1e-12),
                "coordinate {j}: |{mean}| > 3 * {se}"
            );
        }
    }

    #[test]
    fn pseudo_gram_matches_weighted_gram() {
        // sum x~ x~' must equal sum H_h(e) x x' entrywise.
        let k = KernelSpec::new(KernelFamily::Gaussian, 0.7, 1e-8).unwrap();
        let tau = q(0.5);
        let beta = [0.3, -0.6];
        let mut rng = RngStream::new(7, 0);
        let dim = 2;
        let mut gram_pseudo = vec![vec![0.0; dim]; dim];
        let mut gram_weighted = vec![vec![0.0; dim]; dim];
        for _ in 0..500 {
            let x = vec![1.0, rng.standard_normal()];
            let y = rng.standard_normal() * 2.0;
            let ps = make_pseudo_sample(&x, y, &beta, &k, tau).unwrap();
            let w = k.weight(y - dot(&x, &beta));
            for i in 0..dim {
                for j in 0..dim {
                    gram_pseudo[i][j] += ps.x_tilde[i] * ps.x_tilde[j];
                    gram_weighted[i][j] += w * x[i] * x[j];
                }
            }
        }
        for i in 0..dim {
            for j in 0..dim {
                assert_abs_diff_eq!(gram_pseudo[i][j], gram_weighted[i][j], epsilon = 1e-9);
            }
        }
    }
}
