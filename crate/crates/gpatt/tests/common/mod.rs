//! Shared oracles for the integration suites: dense linear-algebra references
//! and quadrature, independent of the structured implementation paths they
//! check.

use gpatt::grid::{Grid, ObservationSet};
use gpatt::kernels::{KernelModel, SmComponent, SmKernel1d, SmpKernel};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::Rng;

/// Dense Kronecker product of explicit factors.
pub fn dense_kron(factors: &[DMatrix<f64>]) -> DMatrix<f64> {
    factors[1..].iter().fold(factors[0].clone(), |acc, f| acc.kronecker(f))
}

/// Dense N x N covariance of a product kernel model on a grid.
pub fn dense_cov(model: &KernelModel, grid: &Grid) -> DMatrix<f64> {
    let n = grid.len();
    DMatrix::from_fn(n, n, |a, b| {
        let xa = grid.node(a);
        let xb = grid.node(b);
        (0..grid.dims()).map(|p| model.eval_1d(p, xa[p] - xb[p])).product()
    })
}

/// Dense GP on the real observations only; the reference for the lifted
/// imaginary-observation path. Returns the posterior mean and variance at
/// every grid node and the exact log marginal likelihood.
pub struct DenseGp {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub lml: f64,
}

pub fn dense_gp(model: &KernelModel, obs: &ObservationSet, sigma_sq: f64) -> DenseGp {
    let grid = obs.grid();
    let n = grid.len();
    let k_full = dense_cov(model, grid);
    let real = obs.real_indices();
    let m = real.len();
    let mut k_m = DMatrix::zeros(m, m);
    for (i, &a) in real.iter().enumerate() {
        for (j, &b) in real.iter().enumerate() {
            k_m[(i, j)] = k_full[(a, b)];
        }
    }
    let k_noisy = &k_m + DMatrix::identity(m, m) * sigma_sq;
    let chol = k_noisy.clone().cholesky().expect("oracle gram not SPD");
    let y_m = DVector::from_vec(obs.real_values());
    let alpha = chol.solve(&y_m);

    let mut mean = vec![0.0; n];
    let mut variance = vec![0.0; n];
    for t in 0..n {
        let k_star = DVector::from_fn(m, |i, _| k_full[(t, real[i])]);
        mean[t] = k_star.dot(&alpha);
        let beta = chol.solve(&k_star);
        variance[t] = k_full[(t, t)] - k_star.dot(&beta);
    }
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let lml = -0.5
        * (y_m.dot(&alpha) + log_det + m as f64 * (2.0 * std::f64::consts::PI).ln());
    DenseGp { mean, variance, lml }
}

/// Composite Simpson rule.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + h * i as f64);
    }
    acc * h / 3.0
}

/// Inverse Fourier transform of a spectral density by quadrature over a
/// window wide enough for the mixture's support and the cosine's oscillation.
pub fn bochner_quadrature(k: &SmKernel1d, tau: f64) -> f64 {
    let mu_max = k.components().iter().map(|c| c.mean_freq).fold(0.0, f64::max);
    let sd_max = k.components().iter().map(|c| c.var_freq.sqrt()).fold(0.0, f64::max);
    let half = mu_max + 12.0 * sd_max;
    let cycles = (2.0 * half * tau.abs()).ceil() as usize + 1;
    let n = 4000.max(cycles * 64);
    simpson(
        |s| k.spectral_density(s) * (2.0 * std::f64::consts::PI * s * tau).cos(),
        -half,
        half,
        n,
    )
}

pub fn random_sm_component(rng: &mut StdRng) -> SmComponent {
    SmComponent::new(
        rng.random_range(0.1..2.0),
        rng.random_range(0.0..0.45),
        rng.random_range(0.002..0.15),
    )
    .unwrap()
}

pub fn random_smp_model(rng: &mut StdRng, dims: usize, components: usize) -> KernelModel {
    let dim_kernels = (0..dims)
        .map(|_| {
            SmKernel1d::new((0..components).map(|_| random_sm_component(rng)).collect())
                .unwrap()
        })
        .collect();
    KernelModel::Smp(SmpKernel::new(dim_kernels).unwrap())
}

/// Random grid with the given total-size bound; axes may be irregular.
pub fn random_grid(rng: &mut StdRng, dims: usize, max_total: usize) -> Grid {
    let max_side = (max_total as f64).powf(1.0 / dims as f64).floor() as usize;
    let axes: Vec<Vec<f64>> = (0..dims)
        .map(|_| {
            let n = rng.random_range(2..=max_side.max(2));
            let mut axis = vec![0.0];
            for _ in 1..n {
                let last = *axis.last().unwrap();
                axis.push(last + rng.random_range(0.5..1.5));
            }
            axis
        })
        .collect();
    Grid::new(axes).unwrap()
}

/// Random hole mask keeping at least one real observation.
pub fn random_mask(rng: &mut StdRng, n: usize, hole_fraction: f64) -> Vec<bool> {
    loop {
        let mask: Vec<bool> =
            (0..n).map(|_| rng.random_range(0.0..1.0) >= hole_fraction).collect();
        if mask.iter().any(|&m| m) {
            return mask;
        }
    }
}

pub fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}
