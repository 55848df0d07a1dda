//! Trainable kernel models and the flat unconstrained parameter vector the
//! optimizer works on. Positive parameters live on log scale.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::kernels::{gram_1d, SmComponent, SmKernel1d, SmpKernel, MU_FLOOR};

/// Baseline single-lengthscale kernel families, applied as a product across
/// input dimensions so they fit the structured inference path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsoFamily {
    Se,
    Matern32,
    Rq,
}

/// A kernel with trainable hyperparameters: either a spectral mixture product
/// or a baseline family with a shared lengthscale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KernelModel {
    Smp(SmpKernel),
    Iso { family: IsoFamily, dims: usize, lengthscale: f64, alpha: f64 },
}

impl KernelModel {
    pub fn iso(family: IsoFamily, dims: usize, lengthscale: f64) -> Self {
        KernelModel::Iso { family, dims, lengthscale, alpha: 1.0 }
    }

    pub fn dims(&self) -> usize {
        match self {
            KernelModel::Smp(k) => k.dims(),
            KernelModel::Iso { dims, .. } => *dims,
        }
    }

    /// Number of trainable kernel parameters (noise not included).
    pub fn param_count(&self) -> usize {
        match self {
            KernelModel::Smp(k) => 3 * k.dims() * k.num_components(),
            KernelModel::Iso { family: IsoFamily::Rq, .. } => 2,
            KernelModel::Iso { .. } => 1,
        }
    }

    pub fn layout(&self) -> ParamLayout {
        match self {
            KernelModel::Smp(k) => {
                ParamLayout::Smp { dims: k.dims(), components: k.num_components() }
            }
            KernelModel::Iso { family, dims, .. } => {
                ParamLayout::Iso { family: *family, dims: *dims }
            }
        }
    }

    pub fn eval_1d(&self, p: usize, tau: f64) -> f64 {
        match self {
            KernelModel::Smp(k) => k.dim(p).eval(tau),
            KernelModel::Iso { family, lengthscale, alpha, .. } => {
                iso_eval(*family, *lengthscale, *alpha, tau)
            }
        }
    }

    pub fn k0(&self) -> f64 {
        (0..self.dims()).map(|p| self.eval_1d(p, 0.0)).product()
    }

    pub fn to_raw(&self) -> Vec<f64> {
        match self {
            KernelModel::Smp(k) => {
                let mut raw = Vec::with_capacity(self.param_count());
                for d in k.dim_kernels() {
                    for c in d.components() {
                        raw.push(c.weight_sq.ln());
                        raw.push(c.mean_freq.max(MU_FLOOR).ln());
                        raw.push(c.var_freq.ln());
                    }
                }
                raw
            }
            KernelModel::Iso { family, lengthscale, alpha, .. } => {
                let mut raw = vec![lengthscale.ln()];
                if *family == IsoFamily::Rq {
                    raw.push(alpha.ln());
                }
                raw
            }
        }
    }

    /// Rebuilds a model of the same shape from a raw parameter vector.
    pub fn from_raw(&self, raw: &[f64]) -> Result<KernelModel> {
        if raw.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "raw vector has {} entries, model needs {}",
                raw.len(),
                self.param_count()
            )));
        }
        match self {
            KernelModel::Smp(k) => {
                let a = k.num_components();
                let dims = k
                    .dim_kernels()
                    .iter()
                    .enumerate()
                    .map(|(p, _)| {
                        let comps = (0..a)
                            .map(|i| {
                                let base = p * 3 * a + 3 * i;
                                SmComponent::new(
                                    raw[base].exp(),
                                    raw[base + 1].exp(),
                                    raw[base + 2].exp(),
                                )
                            })
                            .collect::<Result<Vec<_>>>()?;
                        SmKernel1d::new(comps)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(KernelModel::Smp(SmpKernel::new(dims)?))
            }
            KernelModel::Iso { family, dims, .. } => Ok(KernelModel::Iso {
                family: *family,
                dims: *dims,
                lengthscale: raw[0].exp(),
                alpha: if *family == IsoFamily::Rq { raw[1].exp() } else { 1.0 },
            }),
        }
    }

    /// Per-axis gram matrices, in axis order (axis 0 first).
    pub fn gram_factors(&self, grid: &Grid) -> Vec<DMatrix<f64>> {
        (0..self.dims()).map(|p| gram_1d(|t| self.eval_1d(p, t), grid.axis(p))).collect()
    }

    /// Derivative of the per-axis grams with respect to raw parameter `j`.
    /// Returns the affected axes with the differentiated gram; for an SMP
    /// parameter this is a single axis, for a shared-lengthscale baseline it
    /// is every axis.
    pub fn gram_grad(&self, grid: &Grid, j: usize) -> Vec<(usize, DMatrix<f64>)> {
        match self {
            KernelModel::Smp(k) => {
                let a = k.num_components();
                let p = j / (3 * a);
                let local = j % (3 * a);
                let comp = &k.dim(p).components()[local / 3];
                let role = local % 3;
                let g = gram_1d(|t| sm_grad_entry(comp, role, t), grid.axis(p));
                vec![(p, g)]
            }
            KernelModel::Iso { family, dims, lengthscale, alpha } => (0..*dims)
                .map(|p| {
                    let g = gram_1d(
                        |t| iso_grad_entry(*family, *lengthscale, *alpha, j, t),
                        grid.axis(p),
                    );
                    (p, g)
                })
                .collect(),
        }
    }
}

fn iso_eval(family: IsoFamily, ell: f64, alpha: f64, tau: f64) -> f64 {
    match family {
        IsoFamily::Se => (-0.5 * tau * tau / (ell * ell)).exp(),
        IsoFamily::Matern32 => {
            let r = 3f64.sqrt() * tau.abs() / ell;
            (1.0 + r) * (-r).exp()
        }
        IsoFamily::Rq => (1.0 + tau * tau / (2.0 * alpha * ell * ell)).powf(-alpha),
    }
}

/// Derivative of a baseline 1-D kernel with respect to raw parameter `j`
/// (0 = log lengthscale, 1 = log alpha for the rational quadratic).
fn iso_grad_entry(family: IsoFamily, ell: f64, alpha: f64, j: usize, tau: f64) -> f64 {
    match (family, j) {
        (IsoFamily::Se, 0) => {
            let k = (-0.5 * tau * tau / (ell * ell)).exp();
            k * tau * tau / (ell * ell)
        }
        (IsoFamily::Matern32, 0) => {
            let r = 3f64.sqrt() * tau.abs() / ell;
            r * r * (-r).exp()
        }
        (IsoFamily::Rq, 0) => {
            let u = tau * tau / (2.0 * alpha * ell * ell);
            let b = 1.0 + u;
            2.0 * alpha * u * b.powf(-alpha - 1.0)
        }
        (IsoFamily::Rq, 1) => {
            let u = tau * tau / (2.0 * alpha * ell * ell);
            let b = 1.0 + u;
            b.powf(-alpha) * alpha * (u / b - b.ln())
        }
        _ => 0.0,
    }
}

/// Derivative of one spectral-mixture component with respect to one of its raw
/// parameters (0 = log w^2, 1 = log mu, 2 = log sigma^2).
fn sm_grad_entry(c: &SmComponent, role: usize, tau: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let t2 = tau * tau;
    let envelope = (-2.0 * pi * pi * t2 * c.var_freq).exp();
    let phase = 2.0 * pi * tau * c.mean_freq;
    match role {
        0 => c.weight_sq * envelope * phase.cos(),
        1 => c.mean_freq * c.weight_sq * envelope * (-2.0 * pi * tau) * phase.sin(),
        2 => c.var_freq * c.weight_sq * envelope * phase.cos() * (-2.0 * pi * pi * t2),
        _ => unreachable!(),
    }
}

/// Describes how the flat raw vector maps onto kernel-parameter roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamLayout {
    Smp { dims: usize, components: usize },
    Iso { family: IsoFamily, dims: usize },
}

impl ParamLayout {
    pub fn param_count(&self) -> usize {
        match self {
            ParamLayout::Smp { dims, components } => 3 * dims * components,
            ParamLayout::Iso { family: IsoFamily::Rq, .. } => 2,
            ParamLayout::Iso { .. } => 1,
        }
    }

    /// Human-readable role of raw index `j`, for reports.
    pub fn role(&self, j: usize) -> String {
        match self {
            ParamLayout::Smp { components, .. } => {
                let a = *components;
                let p = j / (3 * a);
                let local = j % (3 * a);
                let comp = local / 3;
                let role = ["log_weight_sq", "log_mean_freq", "log_var_freq"][local % 3];
                format!("dim{p}.comp{comp}.{role}")
            }
            ParamLayout::Iso { .. } => {
                if j == 0 { "log_lengthscale".into() } else { "log_alpha".into() }
            }
        }
    }
}

/// Flat unconstrained hyperparameter vector: kernel parameters plus the log
/// noise variance. The optimizer sees `full_raw()`, everything else unpacks
/// through [`HyperParams::kernel`] and [`HyperParams::noise_var`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub raw: Vec<f64>,
    pub noise_raw: f64,
    pub layout: ParamLayout,
}

impl HyperParams {
    pub fn pack(model: &KernelModel, noise_var: f64) -> Result<Self> {
        if !(noise_var > 0.0) || !noise_var.is_finite() {
            return Err(Error::InvalidParameter {
                name: "noise_var",
                value: noise_var,
                reason: "must be positive and finite",
            });
        }
        Ok(HyperParams {
            raw: model.to_raw(),
            noise_raw: noise_var.ln(),
            layout: model.layout(),
        })
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_raw.exp()
    }

    /// Rebuilds the kernel model from the raw vector.
    pub fn kernel(&self) -> Result<KernelModel> {
        self.prototype().from_raw(&self.raw)
    }

    fn prototype(&self) -> KernelModel {
        match self.layout {
            ParamLayout::Smp { dims, components } => {
                let unit = SmKernel1d::new(vec![
                    SmComponent::new(1.0, MU_FLOOR, 1.0).unwrap();
                    components
                ])
                .unwrap();
                KernelModel::Smp(SmpKernel::new(vec![unit; dims]).unwrap())
            }
            ParamLayout::Iso { family, dims } => KernelModel::iso(family, dims, 1.0),
        }
    }

    /// Kernel parameters followed by the log noise variance; the optimizer's
    /// view of the state.
    pub fn full_raw(&self) -> Vec<f64> {
        let mut v = self.raw.clone();
        v.push(self.noise_raw);
        v
    }

    pub fn from_full_raw(layout: ParamLayout, full: &[f64]) -> Result<Self> {
        if full.len() != layout.param_count() + 1 {
            return Err(Error::ShapeMismatch(format!(
                "full raw vector has {} entries, layout needs {}",
                full.len(),
                layout.param_count() + 1
            )));
        }
        Ok(HyperParams {
            raw: full[..full.len() - 1].to_vec(),
            noise_raw: full[full.len() - 1],
            layout,
        })
    }
}
