//! Command-line surface for grid GP pattern extrapolation: data ingestion,
//! training, prediction, image inpainting, synthetic generation, spectrum
//! export and stress suites. Every run writes a manifest sufficient to
//! reproduce its artifacts.

mod data;
mod manifest;
mod mask;
mod raster;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use gpatt::eval::{
    self, export_spectrum, holesize_stress, kernel_slice, msll, runtime_stress, smse,
    MetricReport,
};
use gpatt::grid::{Grid, ObservationSet};
use gpatt::inference::{
    pcg_solve, predict_mean, predict_variance_budgeted, NoiseModel, SolveConfig,
};
use gpatt::kernels::{IsoFamily, KernelModel, KernelSpec, SmpKernel};
use gpatt::kronecker::KroneckerOperator;
use gpatt::training::{train, train_model, TrainConfig, TrainReport};

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "gpatt", version, about = "Gaussian-process pattern extrapolation on grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn kernel hyperparameters on a grid dataset.
    Train(WithConfig<TrainParams>),
    /// Predict on a grid dataset with a trained model.
    Predict(WithConfig<PredictParams>),
    /// Reconstruct masked regions of an image, one model per channel.
    Inpaint(WithConfig<InpaintParams>),
    /// Draw a synthetic dataset from a product kernel.
    Synth(WithConfig<SynthParams>),
    /// Export the analytic log spectrum of a trained model.
    Spectrum(WithConfig<SpectrumParams>),
    /// Runtime or hole-size stress suites.
    Stress(WithConfig<StressParams>),
}

/// Wraps a parameter block with an optional JSON config file that overrides
/// every flag.
#[derive(Args)]
struct WithConfig<T: Args> {
    /// JSON file holding the full parameter block; overrides all other flags.
    #[arg(long, global = false)]
    config: Option<PathBuf>,
    #[command(flatten)]
    params: T,
}

impl<T: Args + DeserializeOwned> WithConfig<T> {
    fn resolve(self) -> Result<T> {
        match self.config {
            Some(path) => {
                let text = fs::read_to_string(&path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))
            }
            None => Ok(self.params),
        }
    }
}

/// A trained kernel with its noise variance, as stored in model.json.
#[derive(Debug, Serialize, Deserialize)]
struct SavedModel {
    kernel: KernelModel,
    noise_var: f64,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(a) => run_train(a.resolve()?),
        Command::Predict(a) => run_predict(a.resolve()?),
        Command::Inpaint(a) => run_inpaint(a.resolve()?),
        Command::Synth(a) => run_synth(a.resolve()?),
        Command::Spectrum(a) => run_spectrum(a.resolve()?),
        Command::Stress(a) => run_stress(a.resolve()?),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn train_config(components: usize, restarts: usize, max_iters: usize, seed: u64, pcg_tol: f64, budget: usize) -> TrainConfig {
    TrainConfig {
        components,
        restarts,
        max_opt_iter: max_iters,
        seed,
        pcg_tol,
        variance_budget: budget,
        ..Default::default()
    }
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Args, Serialize, Deserialize)]
struct TrainParams {
    /// Grid dataset (JSON header with values inline or in a CSV sidecar).
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Mixture components per dimension.
    #[arg(long, default_value_t = 10)]
    components: usize,
    #[arg(long, default_value_t = 3)]
    restarts: usize,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    pcg_tol: f64,
    #[arg(long, default_value_t = 5000)]
    variance_budget: usize,
    /// Emit solver diagnostics as JSON lines on stderr.
    #[arg(long, default_value_t = false)]
    verbose: bool,
}

fn run_train(p: TrainParams) -> Result<()> {
    ensure_dir(&p.out)?;
    let mut man = Manifest::new("train", &p)?;
    man.record_input(&p.input)?;

    let dataset = data::load(&p.input)?;
    let config = train_config(p.components, p.restarts, p.max_iters, p.seed, p.pcg_tol, p.variance_budget);
    let report = train(&dataset.observations, &config)?;
    let model = SavedModel {
        kernel: report.final_hypers.kernel()?,
        noise_var: report.final_hypers.noise_var(),
    };

    let report_path = p.out.join("report.json");
    write_json(&report_path, &report)?;
    man.record_output(&report_path);
    let model_path = p.out.join("model.json");
    write_json(&model_path, &model)?;
    man.record_output(&model_path);
    write_model_spectra(&model.kernel, dataset.observations.grid(), &p.out, &mut man)?;

    man.write(&p.out)?;
    println!(
        "trained {} components/dim in {:.1}s, final lml {:.3}",
        p.components, report.wallclock_secs, report.final_lml
    );
    Ok(())
}

fn write_model_spectra(
    kernel: &KernelModel,
    grid: &Grid,
    out: &Path,
    man: &mut Manifest,
) -> Result<()> {
    let KernelModel::Smp(smp) = kernel else { return Ok(()) };
    for (dim, k) in smp.dim_kernels().iter().enumerate() {
        let nyquist = 0.5 / grid.median_spacing(dim);
        let freqs: Vec<f64> =
            (0..=800).map(|i| -1.2 * nyquist + 2.4 * nyquist * i as f64 / 800.0).collect();
        let spec = export_spectrum(k, &freqs);
        let path = out.join(format!("spectrum_dim{dim}.csv"));
        let mut buf = Vec::new();
        eval::write_spectrum_csv(&freqs, &spec, &mut buf)?;
        fs::write(&path, buf)?;
        man.record_output(&path);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// predict

#[derive(Debug, Args, Serialize, Deserialize)]
struct PredictParams {
    #[arg(long)]
    input: PathBuf,
    /// Trained model.json.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Full-grid ground-truth values (CSV, linear order) for metrics over the
    /// masked nodes.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Also compute predictive variance at masked nodes.
    #[arg(long, default_value_t = false)]
    variance: bool,
    #[arg(long, default_value_t = 5000)]
    variance_budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    pcg_tol: f64,
}

fn run_predict(p: PredictParams) -> Result<()> {
    ensure_dir(&p.out)?;
    let mut man = Manifest::new("predict", &p)?;
    man.record_input(&p.input)?;
    man.record_input(&p.model)?;

    let dataset = data::load(&p.input)?;
    let obs = &dataset.observations;
    let saved: SavedModel = serde_json::from_str(&fs::read_to_string(&p.model)?)
        .with_context(|| format!("parsing {}", p.model.display()))?;

    let op = KroneckerOperator::from_axis_grams(saved.kernel.gram_factors(obs.grid()))?;
    let noise = NoiseModel::for_observations(saved.noise_var, obs)?;
    let cfg = SolveConfig { tol: p.pcg_tol, max_iter: 4000, verbose: false };
    let solve = pcg_solve(&op, &noise, obs.values(), &cfg, None)?;
    let mean = predict_mean(&op, &solve)?;

    let holes = obs.imaginary_indices();
    let need_var = p.variance || p.truth.is_some();
    let estimate = if need_var && !holes.is_empty() {
        Some(predict_variance_budgeted(&op, &noise, &holes, p.variance_budget, p.seed, &cfg)?)
    } else {
        None
    };

    let pred_path = p.out.join("predictions.csv");
    {
        let mut out = String::from("index,mean,variance\n");
        let var_at = |i: usize| -> Option<f64> {
            let est = estimate.as_ref()?;
            est.indices.binary_search(&i).ok().map(|k| est.variances[k])
        };
        for (i, m) in mean.iter().enumerate() {
            match var_at(i) {
                Some(v) => out.push_str(&format!("{i},{m},{v}\n")),
                None => out.push_str(&format!("{i},{m},\n")),
            }
        }
        fs::write(&pred_path, out)?;
        man.record_output(&pred_path);
    }

    if let Some(truth_path) = &p.truth {
        man.record_input(truth_path)?;
        let truth = data::read_values_csv(truth_path)?;
        if truth.len() != obs.grid().len() {
            bail!("truth file has {} values, grid has {}", truth.len(), obs.grid().len());
        }
        let est = estimate
            .as_ref()
            .context("metrics need masked nodes to evaluate")?;
        let y: Vec<f64> = est.indices.iter().map(|&i| truth[i]).collect();
        let mu: Vec<f64> = est.indices.iter().map(|&i| mean[i]).collect();
        let var: Vec<f64> = est.variances.iter().map(|v| v + saved.noise_var).collect();
        let report = MetricReport {
            smse: smse(&mu, &y)?,
            msll: msll(&mu, &var, &y, obs.real_mean(), obs.real_variance())?,
            n_test: est.indices.len(),
            variance_subsampled: est.subsampled,
        };
        let path = p.out.join("metrics.json");
        write_json(&path, &report)?;
        man.record_output(&path);
        println!("smse {:.4}, msll {:+.4} over {} nodes", report.smse, report.msll, report.n_test);
    }

    man.write(&p.out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// inpaint

#[derive(Debug, Args, Serialize, Deserialize)]
struct InpaintParams {
    /// Input raster (binary PGM or PPM).
    #[arg(long)]
    input: PathBuf,
    /// Mask specs: a raster path (zero pixels masked) or rect:x0,y0,x1,y1
    /// (half-open), repeatable; masked pixels are hidden from training.
    #[arg(long = "mask")]
    masks: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Kernel family: smp, se, ma or rq.
    #[arg(long, default_value = "smp")]
    kernel: String,
    /// Mixture components per dimension (smp only); the paper-scale default
    /// is 30, desk jobs usually use 10.
    #[arg(long = "A", default_value_t = 10)]
    components: usize,
    #[arg(long, default_value_t = 2)]
    restarts: usize,
    #[arg(long, default_value_t = 150)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    pcg_tol: f64,
    #[arg(long, default_value_t = 5000)]
    variance_budget: usize,
}

struct ChannelOutcome {
    report: TrainReport,
    metrics: Option<MetricReport>,
    denormalized: Vec<f64>,
}

fn run_inpaint(p: InpaintParams) -> Result<()> {
    ensure_dir(&p.out)?;
    let mut man = Manifest::new("inpaint", &p)?;
    man.record_input(&p.input)?;
    for spec in &p.masks {
        if !spec.starts_with("rect:") {
            man.record_input(Path::new(spec))?;
        }
    }

    let image = raster::read(&p.input)?;
    let base = p.input.parent().unwrap_or(Path::new(".")).to_path_buf();
    let visible = mask::resolve(&p.masks, image.width, image.height, &base)?;
    let n_visible = visible.iter().filter(|&&v| v).count();
    if n_visible == 0 {
        bail!("mask hides every pixel; nothing to train on");
    }
    let grid = Grid::regular(&[image.width, image.height])?;
    let holes: Vec<usize> = (0..grid.len()).filter(|&i| !visible[i]).collect();

    let channels: Vec<Vec<f64>> =
        (0..image.channels).map(|c| image.channel_values(c)).collect();

    let outcomes: Vec<Result<ChannelOutcome>> = std::thread::scope(|scope| {
        let handles: Vec<_> = channels
            .iter()
            .enumerate()
            .map(|(ch, values)| {
                let grid = &grid;
                let visible = &visible;
                let holes = &holes;
                let p = &p;
                scope.spawn(move || {
                    inpaint_channel(p, grid, visible, holes, values, ch as u64)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("channel thread panicked")).collect()
    });
    let outcomes: Vec<ChannelOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

    // artifacts: per-channel reports + spectra, combined raster, metrics
    for (ch, o) in outcomes.iter().enumerate() {
        let path = p.out.join(format!("report_ch{ch}.json"));
        write_json(&path, &o.report)?;
        man.record_output(&path);
        if let Ok(KernelModel::Smp(smp)) = o.report.final_hypers.kernel() {
            write_channel_spectra(&smp, &grid, ch, &p.out, &mut man)?;
        }
    }
    let recon_values: Vec<Vec<f64>> = outcomes.iter().map(|o| o.denormalized.clone()).collect();
    let recon = raster::Raster::from_channels(image.width, image.height, &recon_values)?;
    let recon_path =
        p.out.join(if image.channels == 1 { "reconstruction.pgm" } else { "reconstruction.ppm" });
    raster::write(&recon_path, &recon)?;
    man.record_output(&recon_path);

    if !holes.is_empty() {
        let metrics: Vec<&MetricReport> =
            outcomes.iter().filter_map(|o| o.metrics.as_ref()).collect();
        let path = p.out.join("metrics.json");
        write_json(&path, &metrics)?;
        man.record_output(&path);
        for (ch, m) in metrics.iter().enumerate() {
            println!(
                "channel {ch}: smse {:.4}, msll {:+.4} over {} masked pixels",
                m.smse, m.msll, m.n_test
            );
        }
    }
    man.write(&p.out)?;
    Ok(())
}

fn inpaint_channel(
    p: &InpaintParams,
    grid: &Grid,
    visible: &[bool],
    holes: &[usize],
    values: &[f64],
    channel: u64,
) -> Result<ChannelOutcome> {
    // normalize to zero mean, unit variance over the visible pixels
    let vis: Vec<f64> = values
        .iter()
        .zip(visible)
        .filter(|&(_, &v)| v)
        .map(|(&x, _)| x)
        .collect();
    let mean = vis.iter().sum::<f64>() / vis.len() as f64;
    let var = vis.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / vis.len() as f64;
    if var <= 0.0 {
        bail!("channel {channel} is constant over the visible pixels");
    }
    let sd = var.sqrt();
    let normed: Vec<f64> = values.iter().map(|x| (x - mean) / sd).collect();
    let obs = ObservationSet::new(grid.clone(), normed.clone(), visible.to_vec())?;

    let seed = p.seed.wrapping_add(channel);
    let config = train_config(p.components, p.restarts, p.max_iters, seed, p.pcg_tol, p.variance_budget);
    let report = match p.kernel.as_str() {
        "smp" => train(&obs, &config)?,
        other => {
            let family = match other {
                "se" => IsoFamily::Se,
                "ma" => IsoFamily::Matern32,
                "rq" => IsoFamily::Rq,
                _ => bail!("unknown kernel '{other}' (want smp, se, ma or rq)"),
            };
            let start = KernelModel::iso(family, 2, grid.range(0).max(grid.range(1)) / 10.0);
            train_model(&obs, &start, 0.1, &config)?
        }
    };

    let model = report.final_hypers.kernel()?;
    let noise_var = report.final_hypers.noise_var();
    let op = KroneckerOperator::from_axis_grams(model.gram_factors(grid))?;
    let noise = NoiseModel::for_observations(noise_var, &obs)?;
    let cfg = SolveConfig { tol: p.pcg_tol, max_iter: 4000, verbose: false };
    let solve = pcg_solve(&op, &noise, obs.values(), &cfg, None)?;
    let mean_pred = predict_mean(&op, &solve)?;

    let metrics = if holes.is_empty() {
        None
    } else {
        let est =
            predict_variance_budgeted(&op, &noise, holes, p.variance_budget, seed, &cfg)?;
        let y: Vec<f64> = est.indices.iter().map(|&i| normed[i]).collect();
        let mu: Vec<f64> = est.indices.iter().map(|&i| mean_pred[i]).collect();
        let var_n: Vec<f64> = est.variances.iter().map(|v| v + noise_var).collect();
        Some(MetricReport {
            smse: smse(&mu, &y)?,
            msll: msll(&mu, &var_n, &y, obs.real_mean(), obs.real_variance())?,
            n_test: est.indices.len(),
            variance_subsampled: est.subsampled,
        })
    };

    let denormalized: Vec<f64> = mean_pred.iter().map(|m| m * sd + mean).collect();
    Ok(ChannelOutcome { report, metrics, denormalized })
}

fn write_channel_spectra(
    smp: &SmpKernel,
    grid: &Grid,
    channel: usize,
    out: &Path,
    man: &mut Manifest,
) -> Result<()> {
    for (dim, k) in smp.dim_kernels().iter().enumerate() {
        let nyquist = 0.5 / grid.median_spacing(dim);
        let freqs: Vec<f64> =
            (0..=800).map(|i| -1.2 * nyquist + 2.4 * nyquist * i as f64 / 800.0).collect();
        let spec = export_spectrum(k, &freqs);
        let path = out.join(format!("spectrum_ch{channel}_dim{dim}.csv"));
        let mut buf = Vec::new();
        eval::write_spectrum_csv(&freqs, &spec, &mut buf)?;
        fs::write(&path, buf)?;
        man.record_output(&path);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// synth

#[derive(Debug, Args, Serialize, Deserialize)]
struct SynthParams {
    /// Kernel spec JSON (a per-dimension tree under {"type":"dims",...} or a
    /// one-dimensional tree broadcast to every axis).
    #[arg(long)]
    kernel: PathBuf,
    /// Grid shape, e.g. 30x30x30.
    #[arg(long)]
    grid: String,
    #[arg(long, default_value_t = 1.0)]
    spacing: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_shape(spec: &str) -> Result<Vec<usize>> {
    spec.split('x')
        .map(|s| s.trim().parse::<usize>().with_context(|| format!("bad grid spec '{spec}'")))
        .collect()
}

fn run_synth(p: SynthParams) -> Result<()> {
    ensure_dir(&p.out)?;
    let mut man = Manifest::new("synth", &p)?;
    man.record_input(&p.kernel)?;

    let spec: KernelSpec = serde_json::from_str(&fs::read_to_string(&p.kernel)?)
        .with_context(|| format!("parsing {}", p.kernel.display()))?;
    let shape = parse_shape(&p.grid)?;
    if !(p.spacing > 0.0) {
        bail!("spacing must be positive");
    }
    let axes: Vec<Vec<f64>> = shape
        .iter()
        .map(|&n| (0..n).map(|i| i as f64 * p.spacing).collect())
        .collect();
    let grid = Grid::new(axes)?;
    let kernel = spec.to_product_kernel(grid.dims())?;

    let obs = eval::sample_grid_gp_seeded(&kernel, &grid, p.noise, p.seed)?;

    let dataset_path = p.out.join("dataset.json");
    let written = data::save(&dataset_path, &obs, false)?;
    man.record_outputs(&written);

    if grid.dims() == 2 {
        // quick-look raster, normalized to the 8-bit range
        let vals = obs.values();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in vals {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
        let pixels: Vec<f64> = vals.iter().map(|v| (v - lo) * scale).collect();
        let shape = grid.shape();
        let preview = raster::Raster::from_channels(shape[0], shape[1], &[pixels])?;
        let path = p.out.join("preview.pgm");
        raster::write(&path, &preview)?;
        man.record_output(&path);
    }

    man.write(&p.out)?;
    println!("sampled {} nodes with seed {}", grid.len(), p.seed);
    Ok(())
}

// ---------------------------------------------------------------------------
// spectrum

#[derive(Debug, Args, Serialize, Deserialize)]
struct SpectrumParams {
    /// Trained model.json with a spectral mixture product kernel.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Half-width of the frequency window; defaults to 1.2x the largest
    /// component frequency plus six bandwidths.
    #[arg(long)]
    fmax: Option<f64>,
    #[arg(long, default_value_t = 801)]
    points: usize,
}

fn run_spectrum(p: SpectrumParams) -> Result<()> {
    ensure_dir(&p.out)?;
    let mut man = Manifest::new("spectrum", &p)?;
    man.record_input(&p.model)?;

    let saved: SavedModel = serde_json::from_str(&fs::read_to_string(&p.model)?)?;
    let KernelModel::Smp(smp) = &saved.kernel else {
        bail!("spectrum export needs a spectral mixture product model");
    };
    for (dim, k) in smp.dim_kernels().iter().enumerate() {
        let fmax = p.fmax.unwrap_or_else(|| {
            k.components()
                .iter()
                .map(|c| 1.2 * c.mean_freq + 6.0 * c.var_freq.sqrt())
                .fold(0.1, f64::max)
        });
        let freqs: Vec<f64> = (0..p.points)
            .map(|i| -fmax + 2.0 * fmax * i as f64 / (p.points.max(2) - 1) as f64)
            .collect();
        let spec = export_spectrum(k, &freqs);
        let path = p.out.join(format!("spectrum_dim{dim}.csv"));
        let mut buf = Vec::new();
        eval::write_spectrum_csv(&freqs, &spec, &mut buf)?;
        fs::write(&path, buf)?;
        man.record_output(&path);

        let taus: Vec<f64> = (0..=200).map(|i| i as f64 * 0.1).collect();
        let slice = kernel_slice(k, dim, &taus);
        let path = p.out.join(format!("kernel_dim{dim}.csv"));
        let mut buf = Vec::new();
        eval::write_slices_csv(&[slice], &mut buf)?;
        fs::write(&path, buf)?;
        man.record_output(&path);
    }
    man.write(&p.out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// stress

#[derive(Debug, Args, Serialize, Deserialize)]
struct StressParams {
    /// Suite: runtime or holesize.
    #[arg(long)]
    suite: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Runtime suite: square grid sides, comma separated.
    #[arg(long, default_value = "32,100,316")]
    sides: String,
    /// Runtime suite: fraction of real observations per side.
    #[arg(long, default_value = "0.4,0.6,0.7")]
    ratios: String,
    /// Components for the measured kernel (runtime) or trained model
    /// (holesize).
    #[arg(long, default_value_t = 25)]
    components: usize,
    /// Holesize suite: texture side length.
    #[arg(long, default_value_t = 64)]
    side: usize,
    /// Holesize suite: hole fractions, comma separated.
    #[arg(long, default_value = "0.1,0.25,0.4")]
    fractions: String,
    /// Holesize suite: kernels to run, comma separated (gpatt,se,ma,rq).
    #[arg(long, default_value = "gpatt,se,ma,rq")]
    kernels: String,
    #[arg(long, default_value_t = 5000)]
    variance_budget: usize,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|e| anyhow::anyhow!("bad {what} '{p}': {e}")))
        .collect()
}

fn run_stress(p: StressParams) -> Result<()> {
    ensure_dir(&p.out)?;
    let mut man = Manifest::new("stress", &p)?;
    match p.suite.as_str() {
        "runtime" => {
            let sides: Vec<usize> = parse_list(&p.sides, "side")?;
            let ratios: Vec<f64> = parse_list(&p.ratios, "ratio")?;
            let (rows, slope) = runtime_stress(&sides, &ratios, p.components, p.seed)?;
            let path = p.out.join("runtime.csv");
            let mut out = String::from("n,m,seconds,pcg_iterations\n");
            for r in &rows {
                out.push_str(&format!("{},{},{},{}\n", r.n, r.m, r.seconds, r.pcg_iterations));
            }
            fs::write(&path, out)?;
            man.record_output(&path);
            let summary = serde_json::json!({ "slope": slope, "rows": rows });
            let path = p.out.join("runtime.json");
            write_json(&path, &summary)?;
            man.record_output(&path);
            println!("log-log slope: {slope:.3}");
        }
        "holesize" => {
            let fractions: Vec<f64> = parse_list(&p.fractions, "fraction")?;
            let kernel_names: Vec<String> = parse_list(&p.kernels, "kernel")?;
            let kernels: Vec<&str> = kernel_names.iter().map(String::as_str).collect();
            let rows = holesize_stress(
                p.side,
                &fractions,
                &kernels,
                p.components.min(10),
                p.seed,
                p.variance_budget,
            )?;
            let path = p.out.join("holesize.csv");
            let mut out = String::from("kernel,hole_fraction,n_train,n_test,smse,msll\n");
            for r in &rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.kernel, r.hole_fraction, r.n_train, r.n_test, r.smse, r.msll
                ));
                println!(
                    "{:>6} frac {:.2}: smse {:.4}  msll {:+.4}",
                    r.kernel, r.hole_fraction, r.smse, r.msll
                );
            }
            fs::write(&path, out)?;
            man.record_output(&path);
        }
        other => bail!("unknown suite '{other}' (want runtime or holesize)"),
    }
    man.write(&p.out)?;
    Ok(())
}
