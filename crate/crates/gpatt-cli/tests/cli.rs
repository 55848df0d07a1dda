//! End-to-end runs of the binary against small jobs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gpatt"))
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gpatt-cli-{tag}-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// Writes a small smooth grayscale test image.
fn write_test_pgm(path: &Path, side: usize) {
    let mut data = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let v = 128.0
                + 80.0 * (x as f64 * std::f64::consts::PI / 4.0).sin()
                + 40.0 * (y as f64 * std::f64::consts::PI / 8.0).cos();
            data.push(v.clamp(0.0, 255.0) as u8);
        }
    }
    let mut bytes = format!("P5\n{side} {side}\n255\n").into_bytes();
    bytes.extend_from_slice(&data);
    fs::write(path, bytes).unwrap();
}

#[test]
fn synth_is_deterministic_and_writes_manifest() {
    let dir = workdir("synth");
    let kernel = dir.join("kernel.json");
    fs::write(
        &kernel,
        r#"{"type":"dims","dims":[
            {"type":"sum","children":[
                {"type":"se","lengthscale":3.0},
                {"type":"periodic","omega":0.2,"lengthscale":1.0}
            ]},
            {"type":"matern32","lengthscale":2.0}
        ]}"#,
    )
    .unwrap();

    for out in ["a", "b"] {
        let status = bin()
            .args([
                "synth",
                "--kernel",
                kernel.to_str().unwrap(),
                "--grid",
                "12x10",
                "--noise",
                "0.01",
                "--seed",
                "7",
                "--out",
                dir.join(out).to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = fs::read_to_string(dir.join("a/dataset_values.csv")).unwrap();
    let b = fs::read_to_string(dir.join("b/dataset_values.csv")).unwrap();
    assert_eq!(a, b, "same seed must give identical draws");
    assert_eq!(a.lines().count(), 120);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "synth");
    assert!(manifest["inputs"][0]["fnv1a64"].is_string());
    assert!(dir.join("a/preview.pgm").exists());
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn train_then_predict_with_metrics() {
    let dir = workdir("trainpredict");
    // synthesize a 1-D dataset
    let kernel = dir.join("kernel.json");
    fs::write(
        &kernel,
        r#"{"type":"sm","components":[{"weight_sq":1.0,"mean_freq":0.1,"var_freq":0.0005}]}"#,
    )
    .unwrap();
    let synth_out = dir.join("synth");
    assert!(bin()
        .args([
            "synth",
            "--kernel",
            kernel.to_str().unwrap(),
            "--grid",
            "120",
            "--noise",
            "0.01",
            "--seed",
            "3",
            "--out",
            synth_out.to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());

    // hide a contiguous block to make a training set with holes
    let values = fs::read_to_string(synth_out.join("dataset_values.csv")).unwrap();
    let dataset: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(synth_out.join("dataset.json")).unwrap())
            .unwrap();
    let holed = serde_json::json!({
        "axes": dataset["axes"],
        "mask_rle": [50, 20, 50],
        "values_csv": "dataset_values.csv",
    });
    fs::write(synth_out.join("holed.json"), holed.to_string()).unwrap();

    let train_out = dir.join("model");
    assert!(bin()
        .args([
            "train",
            "--input",
            synth_out.join("holed.json").to_str().unwrap(),
            "--out",
            train_out.to_str().unwrap(),
            "--components",
            "3",
            "--restarts",
            "2",
            "--max-iters",
            "80",
            "--seed",
            "5",
        ])
        .status()
        .unwrap()
        .success());
    assert!(train_out.join("model.json").exists());
    assert!(train_out.join("report.json").exists());
    assert!(train_out.join("spectrum_dim0.csv").exists());

    // ground truth for the hole: the original values
    let truth_csv = dir.join("truth.csv");
    fs::write(&truth_csv, values).unwrap();
    let pred_out = dir.join("pred");
    assert!(bin()
        .args([
            "predict",
            "--input",
            synth_out.join("holed.json").to_str().unwrap(),
            "--model",
            train_out.join("model.json").to_str().unwrap(),
            "--truth",
            truth_csv.to_str().unwrap(),
            "--out",
            pred_out.to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(pred_out.join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics["n_test"], 20);
    assert!(metrics["smse"].as_f64().unwrap().is_finite());
    let predictions = fs::read_to_string(pred_out.join("predictions.csv")).unwrap();
    assert_eq!(predictions.lines().count(), 121); // header + 120 nodes
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn spectrum_from_trained_model() {
    let dir = workdir("spectrum");
    let model = dir.join("model.json");
    fs::write(
        &model,
        r#"{"kernel":{"Smp":{"dims":[{"components":[
            {"weight_sq":1.0,"mean_freq":0.2,"var_freq":0.001}
        ]}]}},"noise_var":0.05}"#,
    )
    .unwrap();
    let out = dir.join("out");
    assert!(bin()
        .args(["spectrum", "--model", model.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status()
        .unwrap()
        .success());
    let csv = fs::read_to_string(out.join("spectrum_dim0.csv")).unwrap();
    assert!(csv.starts_with("frequency,log_density\n"));
    assert!(csv.lines().count() > 100);
    assert!(out.join("kernel_dim0.csv").exists());
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn inpaint_identity_on_unmasked_image() {
    // With no mask the reconstruction must reproduce the image almost
    // exactly: near-noiseless interpolation at the training pixels.
    let dir = workdir("identity");
    let img = dir.join("in.pgm");
    write_test_pgm(&img, 24);
    let out = dir.join("out");
    assert!(bin()
        .args([
            "inpaint",
            "--input",
            img.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--A",
            "4",
            "--restarts",
            "2",
            "--max-iters",
            "120",
            "--seed",
            "2",
        ])
        .status()
        .unwrap()
        .success());
    let original = fs::read(&img).unwrap();
    let recon = fs::read(out.join("reconstruction.pgm")).unwrap();
    assert_eq!(original.len(), recon.len());
    let header = original.len() - 24 * 24;
    let max_diff = original[header..]
        .iter()
        .zip(&recon[header..])
        .map(|(&a, &b)| (a as i16 - b as i16).unsigned_abs())
        .max()
        .unwrap();
    assert!(max_diff <= 2, "reconstruction deviates by {max_diff} intensity levels");
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn inpaint_rgb_emits_three_reports() {
    let dir = workdir("rgb");
    let img = dir.join("in.ppm");
    let side = 16usize;
    let mut bytes = format!("P6\n{side} {side}\n255\n").into_bytes();
    for y in 0..side {
        for x in 0..side {
            let v = 100.0 + 60.0 * ((x + y) as f64 * std::f64::consts::PI / 4.0).sin();
            bytes.push(v as u8);
            bytes.push((v * 0.7) as u8);
            bytes.push((255.0 - v) as u8);
        }
    }
    fs::write(&img, bytes).unwrap();
    let out = dir.join("out");
    assert!(bin()
        .args([
            "inpaint",
            "--input",
            img.to_str().unwrap(),
            "--mask",
            "rect:6,6,10,10",
            "--out",
            out.to_str().unwrap(),
            "--A",
            "3",
            "--restarts",
            "1",
            "--max-iters",
            "60",
            "--seed",
            "4",
        ])
        .status()
        .unwrap()
        .success());
    for ch in 0..3 {
        assert!(out.join(format!("report_ch{ch}.json")).exists(), "missing channel {ch} report");
    }
    assert!(out.join("reconstruction.ppm").exists());
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics.as_array().unwrap().len(), 3);
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn stress_runtime_small_ladder() {
    let dir = workdir("stress");
    assert!(bin()
        .args([
            "stress",
            "--suite",
            "runtime",
            "--sides",
            "12,24",
            "--ratios",
            "0.5,0.6",
            "--components",
            "3",
            "--out",
            dir.to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());
    let csv = fs::read_to_string(dir.join("runtime.csv")).unwrap();
    assert!(csv.starts_with("n,m,seconds,pcg_iterations\n"));
    assert_eq!(csv.lines().count(), 3);
    assert!(dir.join("runtime.json").exists());
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn config_file_overrides_flags() {
    let dir = workdir("config");
    let kernel = dir.join("kernel.json");
    fs::write(&kernel, r#"{"type":"se","lengthscale":2.0}"#).unwrap();
    let config = dir.join("job.json");
    let out = dir.join("out");
    fs::write(
        &config,
        serde_json::json!({
            "kernel": kernel.to_str().unwrap(),
            "grid": "8x8",
            "spacing": 1.0,
            "noise": 0.1,
            "seed": 9,
            "out": out.to_str().unwrap(),
        })
        .to_string(),
    )
    .unwrap();
    // flags point at garbage; the config file wins
    assert!(bin()
        .args([
            "synth",
            "--config",
            config.to_str().unwrap(),
            "--kernel",
            "missing.json",
            "--grid",
            "2x2",
            "--out",
            dir.join("ignored").to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());
    assert!(out.join("dataset.json").exists());
    assert!(!dir.join("ignored").exists());
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn missing_input_fails_with_nonzero_exit() {
    let dir = workdir("missing");
    let status = bin()
        .args([
            "train",
            "--input",
            dir.join("nope.json").to_str().unwrap(),
            "--out",
            dir.join("out").to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(!status.success());
    fs::remove_dir_all(&dir).ok();
}
