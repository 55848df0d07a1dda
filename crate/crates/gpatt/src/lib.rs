//! Gaussian-process regression on multidimensional grids.
//!
//! Product-form kernels evaluated on Cartesian grids give covariance matrices
//! with Kronecker structure; this crate exploits that structure for exact
//! inference and marginal-likelihood hyperparameter learning in near-linear
//! time, with spectral mixture product kernels expressive enough to discover
//! and extrapolate patterns (inpainting, hole-filling, kernel recovery)
//! instead of merely smoothing.
//!
//! The main pieces:
//!
//! * [`grid`] — Cartesian-product domains and the real/imaginary observation
//!   split that completes incomplete grids.
//! * [`kernels`] — stationary kernels (SE, Matérn-3/2, RQ, periodic, spectral
//!   mixtures and their per-dimension products) with spectral densities and
//!   analytic derivatives.
//! * [`kronecker`] — matrix-vector products, eigendecomposition and eigenvalue
//!   streams for Kronecker covariance operators.
//! * [`inference`] — posterior solves on complete and incomplete grids
//!   (preconditioned conjugate gradients over imaginary-observation padding),
//!   predictive moments and the marginal likelihood with its gradient.
//! * [`training`] — hyperparameter initialization and BFGS learning with
//!   restarts and weight-pruning diagnostics.
//! * [`eval`] — SMSE/MSLL metrics, exact GP sampling on grids, kernel-recovery
//!   comparison and spectrum export.

pub mod error;
pub mod eval;
pub mod grid;
pub mod inference;
pub mod kernels;
pub mod kronecker;
pub mod training;

pub use error::{Error, Result};
