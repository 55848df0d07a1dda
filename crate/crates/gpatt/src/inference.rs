//! Exact GP inference on grids. Complete grids go through the per-factor
//! eigendecomposition; incomplete grids are padded with imaginary observations
//! and solved with conjugate gradients under a preconditioner that weights the
//! padding out exactly, so inference matches the dense GP on the real
//! observations alone. Only the log-determinant term of the marginal
//! likelihood is approximated, through scaled grid eigenvalues.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::ObservationSet;
use crate::kernels::KernelModel;
use crate::kronecker::{eigendecompose, EigenSystem, KroneckerOperator};

/// Observation noise on the padded grid: sigma^2 on real slots and an
/// infinite-variance limit on imaginary slots. The limit is taken exactly: the
/// preconditioner has entries 1/sigma at real slots and 0 at imaginary slots,
/// so the padded slots never enter the solve.
#[derive(Debug, Clone, Copy)]
pub struct NoiseModel<'a> {
    pub sigma_sq: f64,
    pub mask: &'a [bool],
}

impl<'a> NoiseModel<'a> {
    pub fn new(sigma_sq: f64, mask: &'a [bool]) -> Result<Self> {
        if !(sigma_sq > 0.0) || !sigma_sq.is_finite() {
            return Err(Error::InvalidParameter {
                name: "sigma_sq",
                value: sigma_sq,
                reason: "must be positive and finite",
            });
        }
        Ok(NoiseModel { sigma_sq, mask })
    }

    pub fn for_observations(sigma_sq: f64, obs: &'a ObservationSet) -> Result<Self> {
        NoiseModel::new(sigma_sq, obs.mask())
    }
}

/// Solver settings shared by the conjugate-gradient paths.
#[derive(Debug, Clone, Copy)]
pub struct SolveConfig {
    /// Relative preconditioned-residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Emit diagnostics as JSON lines on stderr.
    pub verbose: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig { tol: 1e-6, max_iter: 1000, verbose: false }
    }
}

impl SolveConfig {
    pub fn with_tol(tol: f64) -> Self {
        SolveConfig { tol, ..Default::default() }
    }
}

/// Result of a lifted posterior solve: alpha plays the role of
/// (K_M + sigma^2 I)^{-1} y_M, padded with exact zeros at imaginary slots.
#[derive(Debug, Clone)]
pub struct PosteriorSolve {
    pub alpha: Vec<f64>,
    pub iterations: usize,
    pub final_residual: f64,
}

/// Log marginal likelihood split into its terms:
/// value = -0.5 (model_fit + complexity) - noise_const,
/// with noise_const = M ln(2 pi) / 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalLikelihood {
    pub value: f64,
    pub model_fit: f64,
    pub complexity: f64,
    pub noise_const: f64,
}

/// Solves (K_N + D_N)^{-1} y by conjugate gradients on the symmetrically
/// preconditioned system (C K C + I) z = C y with C = D_N^{-1/2}; the returned
/// alpha is C z. Entries of y at imaginary slots are ignored.
pub fn pcg_solve(
    op: &KroneckerOperator,
    noise: &NoiseModel,
    y: &[f64],
    cfg: &SolveConfig,
    warm_start: Option<&[f64]>,
) -> Result<PosteriorSolve> {
    let n = op.size();
    if y.len() != n || noise.mask.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "operator size {n} does not match y ({}) or mask ({})",
            y.len(),
            noise.mask.len()
        )));
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tol",
            value: cfg.tol,
            reason: "must be positive",
        });
    }
    let sigma = noise.sigma_sq.sqrt();
    let c: Vec<f64> = noise.mask.iter().map(|&m| if m { 1.0 / sigma } else { 0.0 }).collect();
    let b: Vec<f64> = y.iter().zip(&c).map(|(&v, &ci)| v * ci).collect();
    let b_norm = norm2(&b);
    if b_norm == 0.0 {
        return Ok(PosteriorSolve { alpha: vec![0.0; n], iterations: 0, final_residual: 0.0 });
    }
    if !b_norm.is_finite() {
        return Err(Error::NumericalDegeneracy(
            "preconditioned right-hand side is not finite".into(),
        ));
    }

    // z0 from a previous alpha: z = sigma * alpha on real slots.
    let warm: Option<Vec<f64>> = match warm_start {
        Some(a) if a.len() == n => Some(
            a.iter()
                .zip(noise.mask)
                .map(|(&ai, &m)| if m { sigma * ai } else { 0.0 })
                .collect(),
        ),
        _ => None,
    };

    let mut buf = Vec::with_capacity(n);
    let mut scratch = Vec::with_capacity(n);
    let mut av = vec![0.0; n];
    let apply = |v: &[f64], av: &mut Vec<f64>, buf: &mut Vec<f64>, scratch: &mut Vec<f64>| {
        // (C K C + I) v
        av.clear();
        av.extend(v.iter().zip(&c).map(|(&vi, &ci)| vi * ci));
        let cv = std::mem::take(av);
        op.matvec_into(&cv, buf, scratch).expect("length checked");
        *av = cv;
        for i in 0..v.len() {
            av[i] = c[i] * buf[i] + v[i];
        }
    };

    let (mut z, mut r) = match warm {
        Some(z0) => {
            apply(&z0, &mut av, &mut buf, &mut scratch);
            let r: Vec<f64> = b.iter().zip(&av).map(|(&bi, &ai)| bi - ai).collect();
            (z0, r)
        }
        // a zero start needs no matvec: the residual is the right-hand side
        None => (vec![0.0; n], b.clone()),
    };
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let mut history = Vec::new();
    let mut rel = rs.sqrt() / b_norm;
    history.push(rel);

    let mut iterations = 0;
    // NaN never compares below tol, so a poisoned residual keeps iterating
    // and is caught by the curvature check or the iteration cap.
    while !(rel <= cfg.tol) {
        if !rel.is_finite() {
            return Err(Error::NumericalDegeneracy(format!(
                "conjugate gradient residual became non-finite after {iterations} iterations"
            )));
        }
        if iterations >= cfg.max_iter {
            return Err(Error::Convergence {
                iterations,
                residual: rel,
                tol: cfg.tol,
                history,
            });
        }
        apply(&p, &mut av, &mut buf, &mut scratch);
        let p_ap = dot(&p, &av);
        if !(p_ap > 0.0) || !p_ap.is_finite() {
            return Err(Error::NumericalDegeneracy(format!(
                "conjugate gradients met a non-positive curvature direction (p'Ap = {p_ap:.3e})"
            )));
        }
        let step = rs / p_ap;
        for i in 0..n {
            z[i] += step * p[i];
            r[i] -= step * av[i];
        }
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
        rel = rs.sqrt() / b_norm;
        history.push(rel);
        iterations += 1;
    }

    if cfg.verbose {
        eprintln!(
            "{{\"event\":\"pcg\",\"iterations\":{iterations},\"residual\":{rel:.3e}}}"
        );
    }
    let alpha: Vec<f64> = z.iter().zip(&c).map(|(&zi, &ci)| zi * ci).collect();
    Ok(PosteriorSolve { alpha, iterations, final_residual: rel })
}

/// Posterior mean at every grid node: K_N alpha. Because alpha vanishes at
/// imaginary slots, this equals the dense cross-covariance prediction
/// K_{*M} (K_M + sigma^2 I)^{-1} y_M at training, padded and held-out nodes
/// alike.
pub fn predict_mean(op: &KroneckerOperator, solve: &PosteriorSolve) -> Result<Vec<f64>> {
    op.matvec(&solve.alpha)
}

/// Posterior variance at the given grid nodes (one lifted solve per node).
/// Small negative values from finite solver tolerance are clamped to zero;
/// anything below -1e-8 k(0) is an error.
pub fn predict_variance(
    op: &KroneckerOperator,
    noise: &NoiseModel,
    test_indices: &[usize],
    cfg: &SolveConfig,
) -> Result<Vec<f64>> {
    let n = op.size();
    let k0_scale: f64 = (0..op.num_factors())
        .map(|c| op.factor(c).diagonal().amax())
        .product();
    test_indices
        .par_iter()
        .map(|&t| {
            if t >= n {
                return Err(Error::IndexOutOfBounds {
                    index: vec![t],
                    shape: vec![n],
                });
            }
            let idx = op.decode_index(t);
            let col = op.column(&idx)?;
            let prior = op.diag_entry(&idx);
            let solve = pcg_solve(op, noise, &col, cfg, None)?;
            let explained = dot(&col, &solve.alpha);
            let v = prior - explained;
            if v < -1e-8 * k0_scale {
                return Err(Error::NumericalDegeneracy(format!(
                    "negative predictive variance {v:.3e} at node {t}"
                )));
            }
            Ok(v.max(0.0))
        })
        .collect()
}

/// Variance with a test-point budget: when more nodes are requested than the
/// cap, a seeded uniform subsample is evaluated instead (one solve per point
/// is the dominant cost of loss metrics).
pub struct VarianceEstimate {
    pub indices: Vec<usize>,
    pub variances: Vec<f64>,
    pub subsampled: bool,
}

pub fn predict_variance_budgeted(
    op: &KroneckerOperator,
    noise: &NoiseModel,
    test_indices: &[usize],
    budget: usize,
    seed: u64,
    cfg: &SolveConfig,
) -> Result<VarianceEstimate> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    if budget == 0 {
        return Err(Error::InvalidParameter {
            name: "budget",
            value: 0.0,
            reason: "variance budget must be at least 1",
        });
    }
    let (indices, subsampled) = if test_indices.len() > budget {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = test_indices.to_vec();
        chosen.shuffle(&mut rng);
        chosen.truncate(budget);
        chosen.sort_unstable();
        (chosen, true)
    } else {
        (test_indices.to_vec(), false)
    };
    let variances = predict_variance(op, noise, &indices, cfg)?;
    Ok(VarianceEstimate { indices, variances, subsampled })
}

/// Log marginal likelihood of the observations. The model-fit term y' alpha is
/// exact to solver tolerance; the complexity term log|K_M + D_M| is exact on
/// complete grids and approximated on incomplete ones by the M largest grid
/// eigenvalues scaled by M/N.
pub fn log_marginal_likelihood(
    op: &KroneckerOperator,
    eig: &EigenSystem,
    noise: &NoiseModel,
    obs: &ObservationSet,
    cfg: &SolveConfig,
) -> Result<MarginalLikelihood> {
    lml_with_solve(op, eig, noise, obs, cfg, None).map(|(lml, _)| lml)
}

/// As [`log_marginal_likelihood`], also returning the posterior solve (for
/// reuse as a warm start or for predictions).
pub fn lml_with_solve(
    op: &KroneckerOperator,
    eig: &EigenSystem,
    noise: &NoiseModel,
    obs: &ObservationSet,
    cfg: &SolveConfig,
    warm_start: Option<&[f64]>,
) -> Result<(MarginalLikelihood, PosteriorSolve)> {
    let solve = pcg_solve(op, noise, obs.values(), cfg, warm_start)?;
    let model_fit = dot(obs.values(), &solve.alpha);
    let complexity = complexity_term(eig, obs, noise.sigma_sq, cfg.verbose)?;
    let m = obs.num_real() as f64;
    let noise_const = 0.5 * m * (2.0 * std::f64::consts::PI).ln();
    let value = -0.5 * (model_fit + complexity) - noise_const;
    Ok((MarginalLikelihood { value, model_fit, complexity, noise_const }, solve))
}

fn complexity_term(
    eig: &EigenSystem,
    obs: &ObservationSet,
    sigma_sq: f64,
    verbose: bool,
) -> Result<f64> {
    let m = obs.num_real();
    if m == eig.size() {
        let (value, diag) = eig.log_det_full_grid(sigma_sq)?;
        if verbose {
            eprintln!(
                "{{\"event\":\"logdet\",\"clamped\":{},\"min_eigenvalue\":{:.3e}}}",
                diag.clamped, diag.min_eigenvalue
            );
        }
        Ok(value)
    } else {
        Ok(complexity_from_selection(&eig.top_m_merged(m), eig.size(), m, sigma_sq))
    }
}

fn complexity_from_selection(
    top: &[(f64, usize)],
    n: usize,
    m: usize,
    sigma_sq: f64,
) -> f64 {
    let ratio = m as f64 / n as f64;
    top.iter().map(|&(l, _)| (ratio * l + sigma_sq).ln()).sum()
}

/// Value, gradient and solve from one marginal-likelihood evaluation.
#[derive(Debug, Clone)]
pub struct MlEvaluation {
    pub lml: MarginalLikelihood,
    /// Gradient over the raw kernel parameters followed by log sigma^2.
    pub gradient: Vec<f64>,
    pub solve: PosteriorSolve,
}

/// Gradient of the (approximated) log marginal likelihood with respect to the
/// raw kernel parameters and the log noise variance.
///
/// The model-fit term differentiates through the identity
/// d(y' alpha)/d theta = -alpha' (dK/d theta) alpha, where dK/d theta shares
/// all factors with K except the differentiated one; the complexity term
/// differentiates the scaled-eigenvalue sum through per-factor eigenvalue
/// derivatives.
pub fn ml_gradient(
    model: &KernelModel,
    noise_var: f64,
    obs: &ObservationSet,
    cfg: &SolveConfig,
    warm_start: Option<&[f64]>,
) -> Result<MlEvaluation> {
    let grid = obs.grid();
    let p_dims = grid.dims();
    let op = KroneckerOperator::from_axis_grams(model.gram_factors(grid))?;
    let eig = eigendecompose(&op)?;
    let noise = NoiseModel::for_observations(noise_var, obs)?;

    let n = op.size();
    let m = obs.num_real();
    let selection = if m < n { Some(eig.top_m_merged(m)) } else { None };

    let solve = pcg_solve(&op, &noise, obs.values(), cfg, warm_start)?;
    let model_fit = dot(obs.values(), &solve.alpha);
    let complexity = match &selection {
        Some(top) => complexity_from_selection(top, n, m, noise_var),
        None => complexity_term(&eig, obs, noise_var, cfg.verbose)?,
    };
    let noise_const = 0.5 * m as f64 * (2.0 * std::f64::consts::PI).ln();
    let lml = MarginalLikelihood {
        value: -0.5 * (model_fit + complexity) - noise_const,
        model_fit,
        complexity,
        noise_const,
    };

    // Per-factor accumulation of d(complexity)/d(lambda^factor_k), folded into
    // one symmetric matrix per slot: the complexity derivative against any
    // differentiated factor dG at slot c is <Q diag(coef) Q', dG>_F.
    let coef = complexity_coefficients(&eig, obs, noise_var, selection.as_deref());
    let sens: Vec<nalgebra::DMatrix<f64>> = (0..op.num_factors())
        .into_par_iter()
        .map(|c| {
            let q = &eig.factor_vectors()[c];
            let mut scaled = q.clone();
            for (k, mut col) in scaled.column_iter_mut().enumerate() {
                col *= coef[c][k];
            }
            &scaled * q.transpose()
        })
        .collect();

    // The model-fit quadratic form against dK = (F ⊗ ... dG_c ... ⊗ F)
    // splits as gamma_c' (I ⊗ ... dG_c ... ⊗ I) alpha with
    // gamma_c = (F ⊗ ... I_c ... ⊗ F) alpha, which contracts to one matrix
    // per slot shared by every parameter of that slot.
    let quad: Result<Vec<nalgebra::DMatrix<f64>>> = (0..op.num_factors())
        .into_par_iter()
        .map(|c| {
            let mut gamma = Vec::new();
            let mut scratch = Vec::new();
            op.matvec_skip_factor(c, &solve.alpha, &mut gamma, &mut scratch)?;
            op.slot_contraction(c, &gamma, &solve.alpha)
        })
        .collect();
    let quad = quad?;

    let n_params = model.param_count();
    let kernel_grad_at = |j: usize| -> Result<f64> {
        let mut d_model_fit = 0.0;
        let mut d_complexity = 0.0;
        for (axis, d_gram) in model.gram_grad(grid, j) {
            let c = p_dims - 1 - axis; // axis order -> Kronecker order
            d_model_fit -= frobenius_dot(&quad[c], &d_gram);
            d_complexity += frobenius_dot(&sens[c], &d_gram);
        }
        Ok(-0.5 * (d_model_fit + d_complexity))
    };
    // the per-parameter derivative operators are independent
    let kernel_grads: Result<Vec<f64>> = if n >= 4096 && n_params > 1 {
        (0..n_params).into_par_iter().map(kernel_grad_at).collect()
    } else {
        (0..n_params).map(kernel_grad_at).collect()
    };
    let mut gradient = kernel_grads?;
    gradient.push(0.0);

    // Noise gradient, on log scale.
    let alpha_sq: f64 = solve
        .alpha
        .iter()
        .zip(noise.mask)
        .filter(|&(_, &m)| m)
        .map(|(&a, _)| a * a)
        .sum();
    let d_model_fit = -noise_var * alpha_sq;
    let d_complexity =
        noise_var * complexity_noise_partial(&eig, obs, noise_var, selection.as_deref());
    gradient[n_params] = -0.5 * (d_model_fit + d_complexity);

    Ok(MlEvaluation { lml, gradient, solve })
}

/// coef[c][k] = sum over selected merged eigenvalues containing lambda^c_k of
/// (M/N) / ((M/N) lambda + sigma^2) * product of the other factors' values.
fn complexity_coefficients(
    eig: &EigenSystem,
    obs: &ObservationSet,
    sigma_sq: f64,
    selection: Option<&[(f64, usize)]>,
) -> Vec<Vec<f64>> {
    let n = eig.size();
    let m = obs.num_real();
    let ratio = m as f64 / n as f64;
    let values = eig.factor_values();
    let p = values.len();
    let mut coef: Vec<Vec<f64>> = values.iter().map(|v| vec![0.0; v.len()]).collect();

    let mut accumulate = |idx: &[usize], lambda: f64| {
        if lambda <= 0.0 {
            return; // clamped eigenvalues carry no gradient
        }
        let w = ratio / (ratio * lambda + sigma_sq);
        for f in 0..p {
            let mut other = 1.0;
            for g in 0..p {
                if g != f {
                    other *= values[g][idx[g]];
                }
            }
            coef[f][idx[f]] += w * other;
        }
    };

    match selection {
        Some(top) => {
            let sizes: Vec<usize> = values.iter().map(Vec::len).collect();
            let mut strides = vec![1usize; p];
            for c in (0..p.saturating_sub(1)).rev() {
                strides[c] = strides[c + 1] * sizes[c + 1];
            }
            let mut idx = vec![0usize; p];
            for &(lambda, lin) in top {
                let mut rest = lin;
                for c in 0..p {
                    idx[c] = rest / strides[c];
                    rest %= strides[c];
                }
                accumulate(&idx, lambda);
            }
            coef
        }
        None => {
            // Full lattice sweep with an odometer; order is irrelevant here.
            let sizes: Vec<usize> = values.iter().map(Vec::len).collect();
            let mut idx = vec![0usize; p];
            loop {
                let lambda: f64 =
                    idx.iter().enumerate().map(|(c, &i)| values[c][i]).product();
                accumulate(&idx, lambda);
                let mut c = p;
                loop {
                    if c == 0 {
                        return coef;
                    }
                    c -= 1;
                    idx[c] += 1;
                    if idx[c] < sizes[c] {
                        break;
                    }
                    idx[c] = 0;
                }
            }
        }
    }
}

fn complexity_noise_partial(
    eig: &EigenSystem,
    obs: &ObservationSet,
    sigma_sq: f64,
    selection: Option<&[(f64, usize)]>,
) -> f64 {
    let n = eig.size();
    let m = obs.num_real();
    let ratio = m as f64 / n as f64;
    match selection {
        Some(top) => top.iter().map(|&(l, _)| 1.0 / (ratio * l + sigma_sq)).sum(),
        None => {
            let slices: Vec<&[f64]> =
                eig.factor_values().iter().map(Vec::as_slice).collect();
            let mut total = 0.0;
            crate::kronecker::for_each_product(&slices, |_, l| {
                total += 1.0 / (l.max(0.0) + sigma_sq);
            });
            total
        }
    }
}

fn frobenius_dot(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| x * y).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
