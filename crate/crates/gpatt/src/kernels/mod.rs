//! Stationary covariance kernels as functions of the lag tau = x - x',
//! their spectral densities where closed-form, and hyperparameter packing.

mod hyper;
mod sm;

pub use hyper::{HyperParams, IsoFamily, KernelModel, ParamLayout};
pub use sm::{simpson, SmComponent, SmKernel1d, SmpKernel, MU_FLOOR};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squared exponential kernel over a multidimensional lag:
/// exp(-0.5 ||tau||^2 / l^2).
pub fn k_se(tau: &[f64], lengthscale: f64) -> Result<f64> {
    check_positive("lengthscale", lengthscale)?;
    let norm_sq: f64 = tau.iter().map(|t| t * t).sum();
    Ok((-0.5 * norm_sq / (lengthscale * lengthscale)).exp())
}

/// Matern kernel with smoothness 3/2:
/// (1 + sqrt(3)|tau|/l) exp(-sqrt(3)|tau|/l).
pub fn k_matern32(tau: f64, lengthscale: f64) -> Result<f64> {
    check_positive("lengthscale", lengthscale)?;
    let r = 3f64.sqrt() * tau.abs() / lengthscale;
    Ok((1.0 + r) * (-r).exp())
}

/// Rational quadratic kernel: (1 + tau^2 / (2 alpha l^2))^(-alpha).
pub fn k_rq(tau: f64, lengthscale: f64, alpha: f64) -> Result<f64> {
    check_positive("lengthscale", lengthscale)?;
    check_positive("alpha", alpha)?;
    Ok((1.0 + tau * tau / (2.0 * alpha * lengthscale * lengthscale)).powf(-alpha))
}

/// Periodic kernel: exp(-2 sin^2(pi tau omega) / l^2), period 1/omega.
pub fn k_periodic(tau: f64, omega: f64, lengthscale: f64) -> Result<f64> {
    check_positive("omega", omega)?;
    check_positive("lengthscale", lengthscale)?;
    let s = (std::f64::consts::PI * tau * omega).sin();
    Ok((-2.0 * s * s / (lengthscale * lengthscale)).exp())
}

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, value, reason: "must be positive and finite" })
    }
}

/// A one-dimensional stationary kernel, possibly a sum/product composition.
/// Parameters are validated at construction (see [`Kernel1d::validate`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel1d {
    Se { lengthscale: f64 },
    Matern32 { lengthscale: f64 },
    Rq { lengthscale: f64, alpha: f64 },
    Periodic { omega: f64, lengthscale: f64 },
    Sm { components: Vec<SmComponent> },
    Sum { children: Vec<Kernel1d> },
    Product { children: Vec<Kernel1d> },
}

impl Kernel1d {
    pub fn validate(&self) -> Result<()> {
        match self {
            Kernel1d::Se { lengthscale } | Kernel1d::Matern32 { lengthscale } => {
                check_positive("lengthscale", *lengthscale)
            }
            Kernel1d::Rq { lengthscale, alpha } => {
                check_positive("lengthscale", *lengthscale)?;
                check_positive("alpha", *alpha)
            }
            Kernel1d::Periodic { omega, lengthscale } => {
                check_positive("omega", *omega)?;
                check_positive("lengthscale", *lengthscale)
            }
            Kernel1d::Sm { components } => {
                for c in components {
                    SmComponent::new(c.weight_sq, c.mean_freq, c.var_freq)?;
                }
                if components.is_empty() {
                    return Err(Error::KernelSpec("empty spectral mixture".into()));
                }
                Ok(())
            }
            Kernel1d::Sum { children } | Kernel1d::Product { children } => {
                if children.is_empty() {
                    return Err(Error::KernelSpec("empty kernel composition".into()));
                }
                children.iter().try_for_each(Kernel1d::validate)
            }
        }
    }

    pub fn eval(&self, tau: f64) -> f64 {
        match self {
            Kernel1d::Se { lengthscale } => {
                (-0.5 * tau * tau / (lengthscale * lengthscale)).exp()
            }
            Kernel1d::Matern32 { lengthscale } => {
                let r = 3f64.sqrt() * tau.abs() / lengthscale;
                (1.0 + r) * (-r).exp()
            }
            Kernel1d::Rq { lengthscale, alpha } => {
                (1.0 + tau * tau / (2.0 * alpha * lengthscale * lengthscale)).powf(-alpha)
            }
            Kernel1d::Periodic { omega, lengthscale } => {
                let s = (std::f64::consts::PI * tau * omega).sin();
                (-2.0 * s * s / (lengthscale * lengthscale)).exp()
            }
            Kernel1d::Sm { components } => {
                let t2 = tau * tau;
                components
                    .iter()
                    .map(|c| {
                        let pi = std::f64::consts::PI;
                        c.weight_sq
                            * (-2.0 * pi * pi * t2 * c.var_freq).exp()
                            * (2.0 * pi * tau * c.mean_freq).cos()
                    })
                    .sum()
            }
            Kernel1d::Sum { children } => children.iter().map(|k| k.eval(tau)).sum(),
            Kernel1d::Product { children } => children.iter().map(|k| k.eval(tau)).product(),
        }
    }

    pub fn k0(&self) -> f64 {
        self.eval(0.0)
    }
}

/// A product-across-dimensions kernel: one 1-D stationary kernel per input
/// dimension. This is the shape Kronecker inference requires.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductKernel {
    pub dims: Vec<Kernel1d>,
}

impl ProductKernel {
    pub fn new(dims: Vec<Kernel1d>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::KernelSpec("product kernel needs at least one dimension".into()));
        }
        dims.iter().try_for_each(Kernel1d::validate)?;
        Ok(ProductKernel { dims })
    }

    pub fn dims(&self) -> usize {
        self.dims.len()
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
        self.dims.iter().map(Kernel1d::k0).product()
    }

    /// Gram matrix of dimension `p` over a coordinate axis.
    pub fn axis_gram(&self, p: usize, axis: &[f64]) -> DMatrix<f64> {
        gram_1d(|tau| self.dims[p].eval(tau), axis)
    }
}

impl From<SmpKernel> for ProductKernel {
    fn from(smp: SmpKernel) -> Self {
        ProductKernel {
            dims: smp
                .dim_kernels()
                .iter()
                .map(|k| Kernel1d::Sm { components: k.components().to_vec() })
                .collect(),
        }
    }
}

/// Dense symmetric gram matrix of a 1-D stationary kernel over an axis:
/// K[i, j] = k(axis[i] - axis[j]). Filled from the upper triangle so the
/// result is exactly symmetric. Equispaced axes produce Toeplitz matrices, so
/// only the n distinct lags are evaluated there.
pub fn gram_1d(kernel: impl Fn(f64) -> f64, axis: &[f64]) -> DMatrix<f64> {
    let n = axis.len();
    if n > 2 {
        let h = axis[1] - axis[0];
        let equispaced =
            axis.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-12 * h.abs());
        if equispaced {
            let lags: Vec<f64> = (0..n).map(|d| kernel(axis[d] - axis[0])).collect();
            return DMatrix::from_fn(n, n, |i, j| lags[i.abs_diff(j)]);
        }
    }
    let diag = kernel(0.0);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = diag;
        for j in (i + 1)..n {
            let v = kernel(axis[i] - axis[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// JSON-facing kernel specification. One-dimensional trees describe a single
/// axis; `dims` wraps per-dimension trees into a product kernel; `smp` names an
/// SMP kernel to be trained (dimension count and components per dimension).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    Se { lengthscale: f64 },
    Matern32 { lengthscale: f64 },
    Rq { lengthscale: f64, alpha: f64 },
    Periodic { omega: f64, lengthscale: f64 },
    Sm { components: Vec<SmComponent> },
    Sum { children: Vec<KernelSpec> },
    Product { children: Vec<KernelSpec> },
    Dims { dims: Vec<KernelSpec> },
    Smp {
        #[serde(rename = "P")]
        p: usize,
        #[serde(rename = "A")]
        a: usize,
    },
}

impl KernelSpec {
    /// Interprets the spec as a single-axis kernel tree.
    pub fn to_kernel_1d(&self) -> Result<Kernel1d> {
        let k = match self {
            KernelSpec::Se { lengthscale } => Kernel1d::Se { lengthscale: *lengthscale },
            KernelSpec::Matern32 { lengthscale } => {
                Kernel1d::Matern32 { lengthscale: *lengthscale }
            }
            KernelSpec::Rq { lengthscale, alpha } => {
                Kernel1d::Rq { lengthscale: *lengthscale, alpha: *alpha }
            }
            KernelSpec::Periodic { omega, lengthscale } => {
                Kernel1d::Periodic { omega: *omega, lengthscale: *lengthscale }
            }
            KernelSpec::Sm { components } => Kernel1d::Sm { components: components.clone() },
            KernelSpec::Sum { children } => Kernel1d::Sum {
                children: children.iter().map(KernelSpec::to_kernel_1d).collect::<Result<_>>()?,
            },
            KernelSpec::Product { children } => Kernel1d::Product {
                children: children.iter().map(KernelSpec::to_kernel_1d).collect::<Result<_>>()?,
            },
            KernelSpec::Dims { .. } | KernelSpec::Smp { .. } => {
                return Err(Error::KernelSpec(
                    "expected a one-dimensional kernel tree, got a multi-dimension spec".into(),
                ))
            }
        };
        k.validate()?;
        Ok(k)
    }

    /// Interprets the spec as a fixed (non-trainable) product kernel over
    /// `dims` dimensions. One-dimensional trees are broadcast to every axis.
    pub fn to_product_kernel(&self, dims: usize) -> Result<ProductKernel> {
        match self {
            KernelSpec::Dims { dims: per_dim } => {
                if per_dim.len() != dims {
                    return Err(Error::KernelSpec(format!(
                        "spec has {} dimensions, data has {dims}",
                        per_dim.len()
                    )));
                }
                ProductKernel::new(
                    per_dim.iter().map(KernelSpec::to_kernel_1d).collect::<Result<_>>()?,
                )
            }
            KernelSpec::Smp { .. } => Err(Error::KernelSpec(
                "an smp spec names a kernel to be trained; train it first".into(),
            )),
            one_dim => {
                let k = one_dim.to_kernel_1d()?;
                ProductKernel::new(vec![k; dims])
            }
        }
    }
}
