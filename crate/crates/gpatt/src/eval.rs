//! Accuracy metrics, exact GP sampling on grids, kernel-recovery comparison,
//! learned-spectrum export and the runtime-scaling stress harness.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ObservationSet};
use crate::inference::{ml_gradient, SolveConfig};
use crate::kernels::{
    Kernel1d, KernelModel, ProductKernel, SmComponent, SmKernel1d, SmpKernel,
};
use crate::kronecker::{eigendecompose, KroneckerOperator};

/// Standardized mean squared error: MSE divided by the (population) variance
/// of the evaluated targets. Predicting the empirical mean of the targets
/// scores exactly 1.
pub fn smse(pred_mean: &[f64], targets: &[f64]) -> Result<f64> {
    if targets.is_empty() || pred_mean.len() != targets.len() {
        return Err(Error::Metric(format!(
            "need matching non-empty predictions and targets, got {} and {}",
            pred_mean.len(),
            targets.len()
        )));
    }
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::Metric("test targets have zero variance".into()));
    }
    let mse = pred_mean
        .iter()
        .zip(targets)
        .map(|(&p, &y)| (p - y) * (p - y))
        .sum::<f64>()
        / n;
    Ok(mse / var)
}

/// Mean standardized log loss: mean negative log predictive density minus the
/// same quantity under the trivial Gaussian fit to the training data
/// (its mean and variance). Zero for the trivial model, negative is better.
pub fn msll(
    pred_mean: &[f64],
    pred_var: &[f64],
    targets: &[f64],
    train_mean: f64,
    train_var: f64,
) -> Result<f64> {
    if targets.is_empty()
        || pred_mean.len() != targets.len()
        || pred_var.len() != targets.len()
    {
        return Err(Error::Metric("mismatched metric input lengths".into()));
    }
    if train_var <= 0.0 {
        return Err(Error::Metric("training variance must be positive".into()));
    }
    if let Some(&v) = pred_var.iter().find(|&&v| v <= 0.0) {
        return Err(Error::Metric(format!("non-positive predictive variance {v}")));
    }
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let n = targets.len() as f64;
    let mut total = 0.0;
    for i in 0..targets.len() {
        let d = targets[i] - pred_mean[i];
        let nlpd = 0.5 * (ln2pi + pred_var[i].ln()) + d * d / (2.0 * pred_var[i]);
        let d0 = targets[i] - train_mean;
        let nlpd0 = 0.5 * (ln2pi + train_var.ln()) + d0 * d0 / (2.0 * train_var);
        total += nlpd - nlpd0;
    }
    Ok(total / n)
}

/// Summary of a prediction run over held-out nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub smse: f64,
    pub msll: f64,
    pub n_test: usize,
    pub variance_subsampled: bool,
}

/// As [`sample_grid_gp`], with the generator seeded here; the seed fully
/// determines the draw.
pub fn sample_grid_gp_seeded(
    kernel: &ProductKernel,
    grid: &Grid,
    noise_var: f64,
    seed: u64,
) -> Result<ObservationSet> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    sample_grid_gp(kernel, grid, noise_var, &mut rng)
}

/// An exact draw from N(0, K + noise_var I) on the full grid, through the
/// symmetric square root Q V^(1/2) Qᵀ of the structured covariance.
pub fn sample_grid_gp(
    kernel: &ProductKernel,
    grid: &Grid,
    noise_var: f64,
    rng: &mut impl Rng,
) -> Result<ObservationSet> {
    if kernel.dims() != grid.dims() {
        return Err(Error::ShapeMismatch(format!(
            "kernel has {} dimensions, grid has {}",
            kernel.dims(),
            grid.dims()
        )));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "noise_var",
            value: noise_var,
            reason: "must be non-negative",
        });
    }
    let grams = (0..grid.dims()).map(|p| kernel.axis_gram(p, grid.axis(p))).collect();
    let op = KroneckerOperator::from_axis_grams(grams)?;
    let eig = eigendecompose(&op)?;
    for vals in eig.factor_values() {
        let max = vals.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        if let Some(&bad) = vals.iter().find(|&&l| l < -1e-8 * max) {
            return Err(Error::Sampling(format!(
                "factor eigenvalue {bad:.3e} is negative beyond tolerance; kernel is not PSD"
            )));
        }
    }

    let n = grid.len();
    let normal = rand_distr::StandardNormal;
    let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(normal)).collect();
    let mut f = eig.apply_qt(&z);
    eig.scale_by_eigenvalues(|l| l.max(0.0).sqrt(), &mut f);
    let mut values = eig.apply_q(&f);
    if noise_var > 0.0 {
        let sd = noise_var.sqrt();
        for v in &mut values {
            *v += sd * rng.sample::<f64, _>(normal);
        }
    }
    ObservationSet::full(grid.clone(), values)
}

/// Normalized kernel profile along one input dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelSlice {
    pub dimension: usize,
    pub taus: Vec<f64>,
    /// k(tau)/k(0) of the generating kernel, when known.
    pub true_values: Option<Vec<f64>>,
    /// k(tau)/k(0) of the learned kernel.
    pub learned_values: Vec<f64>,
}

/// Compares a learned SMP kernel against the per-dimension generating kernels
/// over the given lags; both sides are normalized by k(0). Returns the slices
/// and the per-dimension maximum discrepancy.
pub fn kernel_recovery_compare(
    true_dims: &[Kernel1d],
    learned: &SmpKernel,
    taus_per_dim: &[Vec<f64>],
) -> Result<(Vec<KernelSlice>, Vec<f64>)> {
    let p = learned.dims();
    if true_dims.len() != p || taus_per_dim.len() != p {
        return Err(Error::ShapeMismatch(format!(
            "learned kernel has {p} dimensions, got {} true kernels and {} lag lists",
            true_dims.len(),
            taus_per_dim.len()
        )));
    }
    let mut slices = Vec::with_capacity(p);
    let mut discrepancy = Vec::with_capacity(p);
    for d in 0..p {
        let k_true = &true_dims[d];
        let k_learned = learned.dim(d);
        let t0 = k_true.k0();
        let l0 = k_learned.k0();
        if t0 <= 0.0 || l0 <= 0.0 {
            return Err(Error::Metric("kernel k(0) must be positive for normalization".into()));
        }
        let taus = taus_per_dim[d].clone();
        let tv: Vec<f64> = taus.iter().map(|&t| k_true.eval(t) / t0).collect();
        let lv: Vec<f64> = taus.iter().map(|&t| k_learned.eval(t) / l0).collect();
        let max_gap = tv
            .iter()
            .zip(&lv)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        discrepancy.push(max_gap);
        slices.push(KernelSlice {
            dimension: d,
            taus,
            true_values: Some(tv),
            learned_values: lv,
        });
    }
    Ok((slices, discrepancy))
}

/// Slice of a learned kernel without a reference kernel.
pub fn kernel_slice(learned: &SmKernel1d, dimension: usize, taus: &[f64]) -> KernelSlice {
    let l0 = learned.k0();
    KernelSlice {
        dimension,
        taus: taus.to_vec(),
        true_values: None,
        learned_values: taus.iter().map(|&t| learned.eval(t) / l0).collect(),
    }
}

/// Floor for exported log-spectra, keeping the values finite.
pub const LOG_SPECTRUM_FLOOR: f64 = -690.77552789821368; // ln(1e-300)

/// Analytic log spectral density of a learned 1-D spectral mixture on a
/// frequency grid.
pub fn export_spectrum(learned: &SmKernel1d, freqs: &[f64]) -> Vec<f64> {
    freqs
        .iter()
        .map(|&s| {
            let d = learned.spectral_density(s);
            if d <= 1e-300 {
                LOG_SPECTRUM_FLOOR
            } else {
                d.ln()
            }
        })
        .collect()
}

/// Writes kernel slices as CSV: dimension, tau, learned, [true].
pub fn write_slices_csv(slices: &[KernelSlice], mut w: impl std::io::Write) -> std::io::Result<()> {
    writeln!(w, "dimension,tau,learned,true")?;
    for s in slices {
        for (i, &tau) in s.taus.iter().enumerate() {
            match &s.true_values {
                Some(tv) => writeln!(
                    w,
                    "{},{tau},{},{}",
                    s.dimension, s.learned_values[i], tv[i]
                )?,
                None => writeln!(w, "{},{tau},{},", s.dimension, s.learned_values[i])?,
            }
        }
    }
    Ok(())
}

/// Writes a log-spectrum as CSV: frequency, log_density.
pub fn write_spectrum_csv(
    freqs: &[f64],
    log_density: &[f64],
    mut w: impl std::io::Write,
) -> std::io::Result<()> {
    writeln!(w, "frequency,log_density")?;
    for (s, d) in freqs.iter().zip(log_density) {
        writeln!(w, "{s},{d}")?;
    }
    Ok(())
}

/// Least-squares slope of y against x.
pub fn lsq_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Concentric-ring test pattern on a 2-D grid (unit amplitude, zero mean up
/// to discretization).
pub fn cone_pattern(grid: &Grid) -> Result<Vec<f64>> {
    if grid.dims() != 2 {
        return Err(Error::ShapeMismatch("cone pattern needs a 2-D grid".into()));
    }
    let cx = grid.axis(0)[0] + grid.range(0) / 2.0;
    let cy = grid.axis(1)[0] + grid.range(1) / 2.0;
    Ok((0..grid.len())
        .map(|i| {
            let x = grid.node(i);
            let r = ((x[0] - cx).powi(2) + (x[1] - cy).powi(2)).sqrt();
            (2.0 * std::f64::consts::PI * r / 6.0).cos()
        })
        .collect())
}

/// Quasi-periodic texture for extrapolation tests: incommensurate woven waves
/// at periods 8 and 5, a fine harmonic, and slow large-scale components that
/// give smoothing kernels genuine (but decaying) signal inside holes.
pub fn quasi_periodic_texture(grid: &Grid) -> Result<Vec<f64>> {
    if grid.dims() != 2 {
        return Err(Error::ShapeMismatch("texture generator needs a 2-D grid".into()));
    }
    let tau = 2.0 * std::f64::consts::PI;
    Ok((0..grid.len())
        .map(|i| {
            let x = grid.node(i);
            (tau * x[0] / 8.0).sin() * (tau * x[1] / 8.0).sin()
                + 0.5 * (tau * x[0] / 5.0).cos() * (tau * x[1] / 5.0).cos()
                + 0.25 * (tau * x[0] / 3.0).sin()
                + 0.35 * (tau * x[0] / 24.0).sin()
                + 0.3 * (tau * x[1] / 20.0).cos()
        })
        .collect())
}

/// A fixed spectral-mixture-product kernel for runtime measurements:
/// frequencies fanned over the band, short correlation envelopes, unit total
/// power per dimension. Fixed parameters keep the solver's conditioning flat
/// across grid sizes so the ladder measures scaling, not hyperparameters.
pub fn stress_kernel(dims: usize, components: usize) -> Result<KernelModel> {
    let per_dim = (0..components)
        .map(|a| {
            let mu = if components == 1 {
                0.1
            } else {
                0.03 + 0.42 * a as f64 / (components - 1) as f64
            };
            SmComponent::new(1.0 / components as f64, mu, 2e-3)
        })
        .collect::<Result<Vec<_>>>()?;
    let dim_kernel = SmKernel1d::new(per_dim)?;
    Ok(KernelModel::Smp(SmpKernel::new(vec![dim_kernel; dims])?))
}

/// One row of the runtime stress ladder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuntimeStressRow {
    pub n: usize,
    pub m: usize,
    pub seconds: f64,
    pub pcg_iterations: usize,
}

/// One row of the hole-size accuracy ladder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HolesizeRow {
    pub kernel: String,
    pub hole_fraction: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub smse: f64,
    pub msll: f64,
}

/// Times one marginal-likelihood-plus-gradient evaluation on square 2-D grids
/// of the given side lengths, with the stated fraction of real observations
/// per size. Returns the rows and the fitted log-log slope of time against N.
pub fn runtime_stress(
    sides: &[usize],
    real_ratios: &[f64],
    components: usize,
    seed: u64,
) -> Result<(Vec<RuntimeStressRow>, f64)> {
    use rand::SeedableRng;
    if sides.len() != real_ratios.len() || sides.is_empty() {
        return Err(Error::ShapeMismatch(
            "need one real-observation ratio per ladder size".into(),
        ));
    }
    let model = stress_kernel(2, components)?;
    let noise_var = 0.1;
    let cfg = SolveConfig::default();
    let mut rows = Vec::with_capacity(sides.len());
    for (&side, &ratio) in sides.iter().zip(real_ratios) {
        let grid = Grid::regular(&[side, side])?;
        let n = grid.len();
        let values = cone_pattern(&grid)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ side as u64);
        let mask: Vec<bool> = (0..n).map(|_| rng.random_range(0.0..1.0) < ratio).collect();
        let obs = ObservationSet::new(grid, values, mask)?;
        // warm-up, then best of three
        let warm = ml_gradient(&model, noise_var, &obs, &cfg, None)?;
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let t = std::time::Instant::now();
            let eval = ml_gradient(&model, noise_var, &obs, &cfg, None)?;
            best = best.min(t.elapsed().as_secs_f64());
            std::hint::black_box(eval.lml.value);
        }
        rows.push(RuntimeStressRow {
            n,
            m: obs.num_real(),
            seconds: best,
            pcg_iterations: warm.solve.iterations,
        });
    }
    let points: Vec<(f64, f64)> =
        rows.iter().map(|r| ((r.n as f64).ln(), r.seconds.ln())).collect();
    Ok((rows, lsq_slope(&points)))
}

/// Extrapolation accuracy as a function of hole size on the quasi-periodic
/// texture: a centred square hole covering the given fraction of the area is
/// held out, each kernel family is trained on the rest, and SMSE/MSLL are
/// measured over the hole. `kernels` names any of "gpatt", "se", "ma", "rq".
pub fn holesize_stress(
    side: usize,
    fractions: &[f64],
    kernels: &[&str],
    gpatt_components: usize,
    seed: u64,
    budget: usize,
) -> Result<Vec<HolesizeRow>> {
    use crate::inference::{
        pcg_solve, predict_mean, predict_variance_budgeted, NoiseModel,
    };
    use crate::kernels::IsoFamily;
    use crate::training::{train, train_model, TrainConfig};

    let grid = Grid::regular(&[side, side])?;
    let n = grid.len();
    let raw = quasi_periodic_texture(&grid)?;
    let mut rows = Vec::new();

    for &fraction in fractions {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Metric(format!("hole fraction {fraction} out of range")));
        }
        let hole_side = ((n as f64 * fraction).sqrt().round() as usize).min(side);
        let lo = (side - hole_side) / 2;
        let hi = lo + hole_side;
        let mut mask = vec![true; n];
        if hole_side > 0 {
            for i in 0..n {
                let multi = grid.multi_index(i);
                if (lo..hi).contains(&multi[0]) && (lo..hi).contains(&multi[1]) {
                    mask[i] = false;
                }
            }
        }
        // normalize on training pixels only
        let train_vals: Vec<f64> = (0..n).filter(|&i| mask[i]).map(|i| raw[i]).collect();
        let t_mean = train_vals.iter().sum::<f64>() / train_vals.len() as f64;
        let t_var = train_vals.iter().map(|v| (v - t_mean).powi(2)).sum::<f64>()
            / train_vals.len() as f64;
        let t_sd = t_var.sqrt();
        let normed: Vec<f64> = raw.iter().map(|v| (v - t_mean) / t_sd).collect();
        let obs = ObservationSet::new(grid.clone(), normed.clone(), mask.clone())?;
        let holes: Vec<usize> = (0..n).filter(|&i| !mask[i]).collect();
        if holes.is_empty() {
            continue;
        }

        for &name in kernels {
            let report = match name {
                "gpatt" => {
                    let config = TrainConfig {
                        components: gpatt_components,
                        restarts: 3,
                        max_opt_iter: 200,
                        seed,
                        pcg_tol: 1e-6,
                        ..Default::default()
                    };
                    train(&obs, &config)?
                }
                _ => {
                    let family = match name {
                        "se" => IsoFamily::Se,
                        "ma" => IsoFamily::Matern32,
                        "rq" => IsoFamily::Rq,
                        other => {
                            return Err(Error::Metric(format!("unknown kernel '{other}'")))
                        }
                    };
                    let start = KernelModel::iso(family, 2, side as f64 / 10.0);
                    let config = TrainConfig {
                        components: 1,
                        restarts: 2,
                        max_opt_iter: 80,
                        seed,
                        pcg_tol: 1e-6,
                        ..Default::default()
                    };
                    train_model(&obs, &start, 0.1, &config)?
                }
            };
            let model = report.final_hypers.kernel()?;
            let noise_var = report.final_hypers.noise_var();
            let op = KroneckerOperator::from_axis_grams(model.gram_factors(&grid))?;
            let noise = NoiseModel::for_observations(noise_var, &obs)?;
            let cfg = crate::inference::SolveConfig {
                max_iter: 4000,
                ..Default::default()
            };
            let solve = pcg_solve(&op, &noise, obs.values(), &cfg, None)?;
            let mean = predict_mean(&op, &solve)?;
            let est = predict_variance_budgeted(&op, &noise, &holes, budget, seed, &cfg)?;

            let truth: Vec<f64> = holes.iter().map(|&i| normed[i]).collect();
            let pred: Vec<f64> = holes.iter().map(|&i| mean[i]).collect();
            let smse_val = smse(&pred, &truth)?;
            let sub_truth: Vec<f64> = est.indices.iter().map(|&i| normed[i]).collect();
            let sub_pred: Vec<f64> = est.indices.iter().map(|&i| mean[i]).collect();
            let sub_var: Vec<f64> =
                est.variances.iter().map(|v| v + noise_var).collect();
            let train_mean = obs.real_mean();
            let train_var = obs.real_variance();
            let msll_val = msll(&sub_pred, &sub_var, &sub_truth, train_mean, train_var)?;
            rows.push(HolesizeRow {
                kernel: name.to_string(),
                hole_fraction: fraction,
                n_train: obs.num_real(),
                n_test: holes.len(),
                smse: smse_val,
                msll: msll_val,
            });
        }
    }
    Ok(rows)
}
