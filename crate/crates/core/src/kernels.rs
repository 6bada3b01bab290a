//! Symmetric Gaussian-sum convolution kernels and their closed-form
//! autocorrelation.
//!
//! Every kernel is stored as a sum of centred isotropic Gaussians
//! `G(x) = Σ wᵢ exp(-|x|² / 2σᵢ²)`. The autocorrelation `H = G∗G` of such a
//! sum is again a Gaussian sum, which is what makes every downstream formula
//! (optimality curve, normal equations, peak recovery) closed form.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values below this fraction of the peak are flushed to zero.
pub const FLUSH_RELATIVE: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `∫ G = 1`.
    #[default]
    UnitMass,
    /// `G(0) = 1`.
    UnitPeak,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum KernelShape {
    IsotropicGaussian { sigma: f64 },
    TwoGaussianMixture { alpha: f64, sigma1: f64, sigma2: f64 },
}

/// One centred isotropic Gaussian `weight · exp(-|x|² / 2σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianTerm {
    pub weight: f64,
    pub sigma: f64,
}

impl GaussianTerm {
    #[inline]
    fn eval_sq(&self, r2: f64) -> f64 {
        self.weight * (-0.5 * r2 / (self.sigma * self.sigma)).exp()
    }
}

fn eval_terms(terms: &[GaussianTerm], peak: f64, r2: f64) -> f64 {
    let v: f64 = terms.iter().map(|t| t.eval_sq(r2)).sum();
    if v.abs() < FLUSH_RELATIVE * peak {
        0.0
    } else {
        v
    }
}

fn squared_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Convolution kernel `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    shape: KernelShape,
    dim: usize,
    normalization: Normalization,
    terms: Vec<GaussianTerm>,
    peak: f64,
}

impl Kernel {
    pub fn new(shape: KernelShape, dim: usize, normalization: Normalization) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::invalid(format!("kernel dimension {dim} not supported")));
        }
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("kernel {name} must be positive, got {v}")))
            }
        };
        let mass = |sigma: f64| (2.0 * PI * sigma * sigma).powf(dim as f64 / 2.0);
        let terms = match shape {
            KernelShape::IsotropicGaussian { sigma } => {
                positive("sigma", sigma)?;
                let weight = match normalization {
                    Normalization::UnitMass => 1.0 / mass(sigma),
                    Normalization::UnitPeak => 1.0,
                };
                vec![GaussianTerm { weight, sigma }]
            }
            KernelShape::TwoGaussianMixture { alpha, sigma1, sigma2 } => {
                if !(0.0..=1.0).contains(&alpha) {
                    return Err(Error::invalid(format!("mixture alpha must lie in [0, 1], got {alpha}")));
                }
                positive("sigma1", sigma1)?;
                positive("sigma2", sigma2)?;
                let (w1, w2) = match normalization {
                    Normalization::UnitMass => (alpha / mass(sigma1), (1.0 - alpha) / mass(sigma2)),
                    Normalization::UnitPeak => (alpha, 1.0 - alpha),
                };
                vec![
                    GaussianTerm { weight: w1, sigma: sigma1 },
                    GaussianTerm { weight: w2, sigma: sigma2 },
                ]
            }
        };
        let peak = terms.iter().map(|t| t.weight).sum();
        Ok(Kernel {
            shape,
            dim,
            normalization,
            terms,
            peak,
        })
    }

    pub fn gaussian(dim: usize, sigma: f64, normalization: Normalization) -> Result<Self> {
        Self::new(KernelShape::IsotropicGaussian { sigma }, dim, normalization)
    }

    pub fn mixture(dim: usize, alpha: f64, sigma1: f64, sigma2: f64, normalization: Normalization) -> Result<Self> {
        Self::new(
            KernelShape::TwoGaussianMixture { alpha, sigma1, sigma2 },
            dim,
            normalization,
        )
    }

    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn terms(&self) -> &[GaussianTerm] {
        &self.terms
    }

    /// `G(0)`.
    pub fn peak(&self) -> f64 {
        self.peak
    }

    /// Largest component width; a convenient length scale.
    pub fn width(&self) -> f64 {
        self.terms.iter().map(|t| t.sigma).fold(0.0, f64::max)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.eval_sq(squared_norm(x)))
    }

    /// Evaluates `G` at any point with squared norm `r2`.
    #[inline]
    pub fn eval_sq(&self, r2: f64) -> f64 {
        eval_terms(&self.terms, self.peak, r2)
    }

    /// Closed-form autocorrelation `H = G∗G` over `ℝᵈ`.
    pub fn autocorrelation(&self) -> AutoKernel {
        let d = self.dim as f64;
        let mut terms = Vec::with_capacity(self.terms.len() * (self.terms.len() + 1) / 2);
        for (i, a) in self.terms.iter().enumerate() {
            for (j, b) in self.terms.iter().enumerate().skip(i) {
                let (sa2, sb2) = (a.sigma * a.sigma, b.sigma * b.sigma);
                let factor = (2.0 * PI * sa2 * sb2 / (sa2 + sb2)).powf(d / 2.0);
                let multiplicity = if i == j { 1.0 } else { 2.0 };
                terms.push(GaussianTerm {
                    weight: multiplicity * a.weight * b.weight * factor,
                    sigma: (sa2 + sb2).sqrt(),
                });
            }
        }
        AutoKernel::from_terms(self.dim, terms)
    }
}

/// Autocorrelation kernel `H = G∗G`, possibly rescaled.
///
/// A sampled forward operator with `ρ` measurement points per unit volume
/// has Gram entries `Σⱼ G(zⱼ-a) G(zⱼ-b) ≈ ρ · H(a-b)`; [`AutoKernel::scaled`]
/// produces that discrete-consistent version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoKernel {
    dim: usize,
    terms: Vec<GaussianTerm>,
    peak: f64,
}

impl AutoKernel {
    pub fn from_terms(dim: usize, terms: Vec<GaussianTerm>) -> Self {
        let peak = terms.iter().map(|t| t.weight).sum();
        AutoKernel { dim, terms, peak }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[GaussianTerm] {
        &self.terms
    }

    pub fn scaled(&self, factor: f64) -> AutoKernel {
        let terms = self
            .terms
            .iter()
            .map(|t| GaussianTerm {
                weight: t.weight * factor,
                sigma: t.sigma,
            })
            .collect();
        AutoKernel::from_terms(self.dim, terms)
    }

    /// `H(0)`.
    pub fn h0(&self) -> f64 {
        self.peak
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.eval_sq(squared_norm(x)))
    }

    #[inline]
    pub fn eval_sq(&self, r2: f64) -> f64 {
        eval_terms(&self.terms, self.peak, r2)
    }

    /// `H(a - b)` for two points of the kernel's dimension.
    #[inline]
    pub fn between(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        self.eval_sq(r2)
    }

    /// Scalar `κ` with `∇²H(0) = κ·I`; strictly negative.
    pub fn curvature_at_zero(&self) -> f64 {
        -self.terms.iter().map(|t| t.weight / (t.sigma * t.sigma)).sum::<f64>()
    }

    pub fn hessian_at_zero(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim) * self.curvature_at_zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unit_peak_gaussian_is_one_at_origin() {
        let g = Kernel::gaussian(1, 0.03, Normalization::UnitPeak).unwrap();
        assert_eq!(g.eval(&[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn unit_mass_standard_normal() {
        let g = Kernel::gaussian(1, 1.0, Normalization::UnitMass).unwrap();
        assert_relative_eq!(g.eval(&[0.0]).unwrap(), 0.398_942_280_401_432_7, epsilon = 1e-15);
    }

    #[test]
    fn unit_peak_mixture_is_one_at_origin() {
        let g = Kernel::mixture(2, 0.2, 0.05, 0.0625, Normalization::UnitPeak).unwrap();
        assert_relative_eq!(g.eval(&[0.0, 0.0]).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let g = Kernel::gaussian(2, 1.0, Normalization::UnitMass).unwrap();
        assert!(matches!(g.eval(&[0.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(
            g.autocorrelation().eval(&[0.0, 0.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn invalid_parameters() {
        assert!(Kernel::gaussian(1, 0.0, Normalization::UnitMass).is_err());
        assert!(Kernel::mixture(1, 1.5, 0.1, 0.1, Normalization::UnitMass).is_err());
        assert!(Kernel::mixture(1, 0.5, -0.1, 0.1, Normalization::UnitMass).is_err());
    }

    #[test]
    fn gaussian_autocorrelation_widens_by_sqrt2() {
        let h = Kernel::gaussian(1, 1.0, Normalization::UnitMass).unwrap().autocorrelation();
        assert_eq!(h.terms().len(), 1);
        assert_relative_eq!(h.terms()[0].sigma, 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn mixture_autocorrelation_has_three_terms() {
        let g = Kernel::mixture(2, 0.2, 0.05, 0.0625, Normalization::UnitMass).unwrap();
        let h = g.autocorrelation();
        assert_eq!(h.terms().len(), 3);
        let sigmas: Vec<f64> = h.terms().iter().map(|t| t.sigma).collect();
        assert_relative_eq!(sigmas[0], (2.0 * 0.05f64.powi(2)).sqrt());
        assert_relative_eq!(sigmas[1], (0.05f64.powi(2) + 0.0625f64.powi(2)).sqrt());
        assert_relative_eq!(sigmas[2], (2.0 * 0.0625f64.powi(2)).sqrt());
    }

    #[test]
    fn h0_is_sum_of_component_peaks() {
        let h = Kernel::mixture(1, 0.3, 0.1, 0.2, Normalization::UnitPeak)
            .unwrap()
            .autocorrelation();
        let sum: f64 = h.terms().iter().map(|t| t.weight).sum();
        assert_eq!(h.eval(&[0.0]).unwrap(), sum);
        assert_eq!(h.h0(), sum);
    }

    #[test]
    fn second_derivative_of_unit_mass_gaussian() {
        // std √2 ⇒ H''(0) = -H(0)/2
        let h = Kernel::gaussian(1, 1.0, Normalization::UnitMass).unwrap().autocorrelation();
        assert_relative_eq!(h.curvature_at_zero(), -h.h0() / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn flushes_far_tail() {
        let g = Kernel::gaussian(1, 0.01, Normalization::UnitPeak).unwrap();
        assert_eq!(g.eval(&[1.0]).unwrap(), 0.0);
        assert!(g.eval(&[0.05]).unwrap() > 0.0);
    }

    #[test]
    fn scaling_is_linear() {
        let h = Kernel::gaussian(2, 0.1, Normalization::UnitMass).unwrap().autocorrelation();
        let s = h.scaled(400.0);
        assert_relative_eq!(s.h0(), 400.0 * h.h0(), max_relative = 1e-14);
        assert_relative_eq!(s.curvature_at_zero(), 400.0 * h.curvature_at_zero(), max_relative = 1e-14);
    }
}
