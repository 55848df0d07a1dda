//! Spectral mixture kernels: stationary kernels whose spectral density is a
//! symmetrized scale-location Gaussian mixture.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frequencies are optimized on log scale; this floor keeps log(mu) finite for
/// components centred at the origin.
pub const MU_FLOOR: f64 = 1e-8;

/// One Gaussian component of the spectral mixture: weight w^2, centre
/// frequency mu and frequency variance sigma^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmComponent {
    pub weight_sq: f64,
    pub mean_freq: f64,
    pub var_freq: f64,
}

impl SmComponent {
    pub fn new(weight_sq: f64, mean_freq: f64, var_freq: f64) -> Result<Self> {
        if !(weight_sq > 0.0) || !weight_sq.is_finite() {
            return Err(Error::InvalidParameter {
                name: "weight_sq",
                value: weight_sq,
                reason: "must be positive and finite",
            });
        }
        if !(mean_freq >= 0.0) || !mean_freq.is_finite() {
            return Err(Error::InvalidParameter {
                name: "mean_freq",
                value: mean_freq,
                reason: "must be non-negative and finite",
            });
        }
        if !(var_freq > 0.0) || !var_freq.is_finite() {
            return Err(Error::InvalidParameter {
                name: "var_freq",
                value: var_freq,
                reason: "must be positive and finite",
            });
        }
        Ok(SmComponent { weight_sq, mean_freq, var_freq })
    }
}

/// One-dimensional spectral mixture kernel with A components:
/// k(tau) = sum_a w_a^2 exp(-2 pi^2 tau^2 sigma_a^2) cos(2 pi tau mu_a).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmKernel1d {
    components: Vec<SmComponent>,
}

impl SmKernel1d {
    pub fn new(components: Vec<SmComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::KernelSpec("spectral mixture needs at least one component".into()));
        }
        Ok(SmKernel1d { components })
    }

    pub fn components(&self) -> &[SmComponent] {
        &self.components
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn eval(&self, tau: f64) -> f64 {
        let t2 = tau * tau;
        self.components
            .iter()
            .map(|c| {
                c.weight_sq
                    * (-2.0 * PI * PI * t2 * c.var_freq).exp()
                    * (2.0 * PI * tau * c.mean_freq).cos()
            })
            .sum()
    }

    /// k(0) = sum of squared weights.
    pub fn k0(&self) -> f64 {
        self.components.iter().map(|c| c.weight_sq).sum()
    }

    /// Spectral density: symmetrized Gaussian mixture
    /// S(s) = sum_a w_a^2 [N(s; mu_a, sigma_a^2) + N(-s; mu_a, sigma_a^2)] / 2.
    pub fn spectral_density(&self, s: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                0.5 * c.weight_sq
                    * (gaussian_pdf(s, c.mean_freq, c.var_freq)
                        + gaussian_pdf(-s, c.mean_freq, c.var_freq))
            })
            .sum()
    }

    /// Gradient of k(tau) with respect to the raw parameters
    /// (log w_a^2, log mu_a, log sigma_a^2), grouped per component.
    pub fn grad_raw(&self, tau: f64) -> Vec<f64> {
        let mut grad = Vec::with_capacity(3 * self.components.len());
        let t2 = tau * tau;
        for c in &self.components {
            let envelope = (-2.0 * PI * PI * t2 * c.var_freq).exp();
            let phase = 2.0 * PI * tau * c.mean_freq;
            let term = c.weight_sq * envelope * phase.cos();
            // d/d log(w^2)
            grad.push(term);
            // d/d log(mu): chain rule through mu = exp(raw)
            grad.push(c.mean_freq * c.weight_sq * envelope * (-2.0 * PI * tau) * phase.sin());
            // d/d log(sigma^2)
            grad.push(c.var_freq * term * (-2.0 * PI * PI * t2));
        }
        grad
    }
}

fn gaussian_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    (-0.5 * d * d / var).exp() / (2.0 * PI * var).sqrt()
}

/// Spectral mixture product kernel: independent 1-D spectral mixtures, one per
/// input dimension, multiplied together. Every dimension carries the same
/// number of components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmpKernel {
    dims: Vec<SmKernel1d>,
}

impl SmpKernel {
    pub fn new(dims: Vec<SmKernel1d>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::KernelSpec("product kernel needs at least one dimension".into()));
        }
        let a = dims[0].num_components();
        if dims.iter().any(|d| d.num_components() != a) {
            return Err(Error::KernelSpec(
                "all dimensions of an SMP kernel must share the component count".into(),
            ));
        }
        Ok(SmpKernel { dims })
    }

    pub fn dims(&self) -> usize {
        self.dims.len()
    }

    pub fn num_components(&self) -> usize {
        self.dims[0].num_components()
    }

    pub fn dim(&self, p: usize) -> &SmKernel1d {
        &self.dims[p]
    }

    pub fn dim_kernels(&self) -> &[SmKernel1d] {
        &self.dims
    }

    pub fn eval(&self, tau: &[f64]) -> Result<f64> {
        if tau.len() != self.dims.len() {
            return Err(Error::ShapeMismatch(format!(
                "lag has {} entries, kernel has {} dimensions",
                tau.len(),
                self.dims.len()
            )));
        }
        Ok(tau.iter().zip(&self.dims).map(|(&t, k)| k.eval(t)).product())
    }

    pub fn k0(&self) -> f64 {
        self.dims.iter().map(SmKernel1d::k0).product()
    }
}

/// Numeric integration helper for spectral identities (trapezoid-free
/// composite Simpson); shared by the spectrum export checks.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2; // even
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + h * i as f64);
    }
    acc * h / 3.0
}
