use thiserror::Error;

/// Errors produced by grid construction, kernel evaluation, inference and training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index:?} out of bounds for grid of shape {shape:?}")]
    IndexOutOfBounds { index: Vec<usize>, shape: Vec<usize> },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("duplicate observation at grid node {0:?}")]
    DuplicatePoint(Vec<usize>),

    #[error("coordinate {coord} of point {point:?} is not on any axis of dimension {dim}")]
    OffGridPoint { point: Vec<f64>, coord: f64, dim: usize },

    #[error("invalid kernel parameter {name}: {value} ({reason})")]
    InvalidParameter { name: &'static str, value: f64, reason: &'static str },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("factor {0} of Kronecker operator is not symmetric (max asymmetry {1:.3e})")]
    NonSymmetricFactor(usize, f64),

    #[error("conjugate gradient did not converge in {iterations} iterations (residual {residual:.3e}, tol {tol:.3e})")]
    Convergence { iterations: usize, residual: f64, tol: f64, history: Vec<f64> },

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("invalid kernel specification: {0}")]
    KernelSpec(String),
}

pub type Result<T> = std::result::Result<T, Error>;
