//! Grid dataset files: a JSON header (axes, run-length-encoded mask) with the
//! value array inline or in a CSV sidecar, one value per line in column-major
//! (first axis fastest) linear order.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use gpatt::grid::{rle_decode, rle_encode, Grid, ObservationSet};

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetFile {
    pub axes: Vec<Vec<f64>>,
    /// Alternating run lengths starting with a run of `true` (observed).
    /// Missing means fully observed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_rle: Option<Vec<usize>>,
    /// Inline values in linear order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    /// Sidecar CSV of values, relative to this file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values_csv: Option<String>,
}

pub struct Dataset {
    pub observations: ObservationSet,
}

pub fn load(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: DatasetFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let grid = Grid::new(file.axes).context("invalid axes")?;
    let n = grid.len();

    let values = match (&file.values, &file.values_csv) {
        (Some(v), None) => v.clone(),
        (None, Some(rel)) => {
            let side = path.parent().unwrap_or(Path::new(".")).join(rel);
            read_values_csv(&side)?
        }
        (Some(_), Some(_)) => bail!("dataset has both inline values and a values_csv"),
        (None, None) => bail!("dataset has no values"),
    };
    if values.len() != n {
        bail!("dataset has {} values for a grid of {n} nodes", values.len());
    }
    let mask = match &file.mask_rle {
        Some(runs) => rle_decode(runs, n).context("bad mask run-length encoding")?,
        None => vec![true; n],
    };
    let observations = ObservationSet::new(grid, values, mask)?;
    Ok(Dataset { observations })
}

pub fn save(path: &Path, obs: &ObservationSet, inline: bool) -> Result<Vec<PathBuf>> {
    let mut written = vec![path.to_path_buf()];
    let file = if inline {
        DatasetFile {
            axes: obs.grid().axes().to_vec(),
            mask_rle: Some(rle_encode(obs.mask())),
            values: Some(obs.values().to_vec()),
            values_csv: None,
        }
    } else {
        let csv_name = match path.file_stem() {
            Some(stem) => format!("{}_values.csv", stem.to_string_lossy()),
            None => "values.csv".into(),
        };
        let csv_path = path.parent().unwrap_or(Path::new(".")).join(&csv_name);
        write_values_csv(&csv_path, obs.values())?;
        written.push(csv_path);
        DatasetFile {
            axes: obs.grid().axes().to_vec(),
            mask_rle: Some(rle_encode(obs.mask())),
            values: None,
            values_csv: Some(csv_name),
        }
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(written)
}

pub fn read_values_csv(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        for field in line.split(',') {
            let field = field.trim();
            if field.is_empty() {
                continue;
            }
            let v: f64 = field
                .parse()
                .with_context(|| format!("{}:{}: bad value '{field}'", path.display(), lineno + 1))?;
            out.push(v);
        }
    }
    Ok(out)
}

pub fn write_values_csv(path: &Path, values: &[f64]) -> Result<()> {
    let mut out = String::with_capacity(values.len() * 12);
    for v in values {
        out.push_str(&format!("{v}\n"));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
