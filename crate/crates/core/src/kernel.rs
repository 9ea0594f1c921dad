//! Smoothing kernels for the least-squares transformation of the check loss.

use crate::error::{DpqrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    Gaussian,
    Uniform,
    Epanechnikov,
}

impl KernelFamily {
    /// Kernel density H(u).
    pub fn density(&self, u: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => {
                (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
            }
            KernelFamily::Uniform => {
                if u.abs() <= 1.0 {
                    0.5
                } else {
                    0.0
                }
            }
            KernelFamily::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }

    /// max_u H(u), attained at 0 for all three families.
    pub fn max_density(&self) -> f64 {
        self.density(0.0)
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Uniform => "uniform",
            KernelFamily::Epanechnikov => "epanechnikov",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(KernelFamily::Gaussian),
            "uniform" => Ok(KernelFamily::Uniform),
            "epanechnikov" => Ok(KernelFamily::Epanechnikov),
            other => Err(DpqrError::InvalidParameter(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// A kernel family with bandwidth and a lower weight floor.
///
/// The floor keeps the pseudo-response transform (which divides by the square
/// root of the weight) finite for compact-support kernels.
#[derive(Debug, Clone, Copy)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
    pub density_floor: f64,
    /// Precomputed max_u H(u).
    pub kappa_u: f64,
}

pub const DEFAULT_DENSITY_FLOOR: f64 = 1e-8;

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64, density_floor: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(DpqrError::InvalidParameter(format!(
                "bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        if !(density_floor >= 0.0) {
            return Err(DpqrError::InvalidParameter(format!(
                "density_floor must be nonnegative, got {density_floor}"
            )));
        }
        verify_kernel_shape(family)?;
        Ok(Self { family, bandwidth, density_floor, kappa_u: family.max_density() })
    }

    pub fn with_bandwidth(&self, bandwidth: f64) -> Result<Self> {
        Self::new(self.family, bandwidth, self.density_floor)
    }

    /// Floored rescaled weight `max(H(e/h)/h, density_floor)`.
    pub fn weight(&self, e: f64) -> f64 {
        (self.family.density(e / self.bandwidth) / self.bandwidth).max(self.density_floor)
    }
}

/// Checks symmetry, nonnegativity, and unit mass by Simpson quadrature.
/// Runs once at construction.
fn verify_kernel_shape(family: KernelFamily) -> Result<()> {
    let half_support = match family {
        KernelFamily::Gaussian => 12.0,
        _ => 1.0,
    };
    let n = 4096;
    let hstep = 2.0 * half_support / n as f64;
    let mut mass = 0.0;
    for i in 0..=n {
        let u = -half_support + i as f64 * hstep;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let d = family.density(u);
        if d < 0.0 {
            return Err(DpqrError::InvalidParameter("kernel density must be nonnegative".into()));
        }
        if (d - family.density(-u)).abs() > 0.0 {
            return Err(DpqrError::InvalidParameter("kernel density must be symmetric".into()));
        }
        mass += w * d;
    }
    mass *= hstep / 3.0;
    if (mass - 1.0).abs() > 1e-6 {
        return Err(DpqrError::InvalidParameter(format!(
            "kernel mass {mass} deviates from 1 beyond 1e-6"
        )));
    }
    Ok(())
}

/// The rescaled kernel weight operation `max(H(e/h)/h, floor)`.
pub fn kernel_weight(e: f64, spec: &KernelSpec) -> f64 {
    spec.weight(e)
}

/// Paper-convention global bandwidth `0.5 (log p / N)^{1/3}`.
pub fn default_bandwidth(p: usize, n_total: usize) -> f64 {
    0.5 * ((p as f64).ln() / n_total as f64).cbrt()
}
