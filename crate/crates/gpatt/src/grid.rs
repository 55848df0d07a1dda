//! Cartesian-product input domains and the real/imaginary observation split.
//!
//! A [`Grid`] is a product of per-dimension coordinate axes; values on the grid
//! are stored flat in column-major order (first axis fastest). An
//! [`ObservationSet`] pairs a grid with targets and a mask that separates the
//! observed (real) nodes from the padding (imaginary) nodes used to complete an
//! incomplete grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A Cartesian-product input domain defined by per-dimension coordinate axes.
///
/// Axes are strictly increasing but need not be equispaced.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Vec<f64>>,
}

impl Grid {
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidGrid("grid needs at least one axis".into()));
        }
        for (p, axis) in axes.iter().enumerate() {
            if axis.len() < 2 {
                return Err(Error::InvalidGrid(format!(
                    "axis {p} has {} points, need at least 2",
                    axis.len()
                )));
            }
            if axis.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidGrid(format!("axis {p} contains a non-finite value")));
            }
            if axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidGrid(format!("axis {p} is not strictly increasing")));
            }
        }
        let mut n: usize = 1;
        for axis in &axes {
            n = n.checked_mul(axis.len()).ok_or_else(|| {
                Error::InvalidGrid("total grid size overflows usize".into())
            })?;
        }
        Ok(Grid { axes })
    }

    /// Regular grid with the given shape, spacing 1 and origin 0 on every axis.
    pub fn regular(shape: &[usize]) -> Result<Self> {
        Grid::new(shape.iter().map(|&n| (0..n).map(|i| i as f64).collect()).collect())
    }

    /// Number of input dimensions P.
    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    /// Total number of grid nodes N.
    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        false // every axis has >= 2 points
    }

    pub fn axis(&self, p: usize) -> &[f64] {
        &self.axes[p]
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    /// Column-major flattening: the first axis varies fastest.
    pub fn linear_index(&self, multi: &[usize]) -> Result<usize> {
        if multi.len() != self.dims() {
            return Err(Error::ShapeMismatch(format!(
                "multi-index has {} entries, grid has {} dimensions",
                multi.len(),
                self.dims()
            )));
        }
        let mut lin = 0usize;
        let mut stride = 1usize;
        for (p, (&i, axis)) in multi.iter().zip(&self.axes).enumerate() {
            if i >= axis.len() {
                return Err(Error::IndexOutOfBounds { index: multi.to_vec(), shape: self.shape() });
            }
            let _ = p;
            lin += i * stride;
            stride *= axis.len();
        }
        Ok(lin)
    }

    /// Inverse of [`Grid::linear_index`].
    pub fn multi_index(&self, mut linear: usize) -> Vec<usize> {
        debug_assert!(linear < self.len());
        let mut multi = Vec::with_capacity(self.dims());
        for axis in &self.axes {
            multi.push(linear % axis.len());
            linear /= axis.len();
        }
        multi
    }

    /// Coordinates of the node at the given linear index.
    pub fn node(&self, linear: usize) -> Vec<f64> {
        self.multi_index(linear)
            .iter()
            .zip(&self.axes)
            .map(|(&i, axis)| axis[i])
            .collect()
    }

    /// Median spacing of an axis; used for Nyquist frequencies.
    pub fn median_spacing(&self, p: usize) -> f64 {
        let axis = &self.axes[p];
        let mut gaps: Vec<f64> = axis.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = gaps.len();
        if m % 2 == 1 {
            gaps[m / 2]
        } else {
            0.5 * (gaps[m / 2 - 1] + gaps[m / 2])
        }
    }

    /// Extent (max - min) of an axis.
    pub fn range(&self, p: usize) -> f64 {
        let axis = &self.axes[p];
        axis[axis.len() - 1] - axis[0]
    }
}

/// Grid-aligned targets plus the mask separating real from imaginary nodes.
///
/// Values at imaginary (masked-out) slots are stored as literal zero and are
/// never read as data; inference weights them out exactly.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    grid: Grid,
    values: Vec<f64>,
    mask: Vec<bool>,
    num_real: usize,
}

impl ObservationSet {
    /// Builds an observation set from a full vector of targets and a mask.
    /// Entries at masked-out slots are zeroed.
    pub fn new(grid: Grid, mut values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let n = grid.len();
        if values.len() != n || mask.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "grid has {n} nodes, got {} values and {} mask entries",
                values.len(),
                mask.len()
            )));
        }
        let num_real = mask.iter().filter(|&&m| m).count();
        if num_real == 0 {
            return Err(Error::InvalidGrid("observation set has no real observations".into()));
        }
        for (v, &m) in values.iter_mut().zip(&mask) {
            if !m {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::InvalidGrid("non-finite target value".into()));
            }
        }
        Ok(ObservationSet { grid, values, mask, num_real })
    }

    /// Fully observed grid: every node is real.
    pub fn full(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let mask = vec![true; grid.len()];
        ObservationSet::new(grid, values, mask)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Targets on the full grid, zero at imaginary slots.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Number of real observations M.
    pub fn num_real(&self) -> usize {
        self.num_real
    }

    /// Number of imaginary observations W = N - M.
    pub fn num_imaginary(&self) -> usize {
        self.grid.len() - self.num_real
    }

    /// Linear indices of the real observations, ascending.
    pub fn real_indices(&self) -> Vec<usize> {
        (0..self.grid.len()).filter(|&i| self.mask[i]).collect()
    }

    /// Linear indices of the imaginary observations, ascending.
    pub fn imaginary_indices(&self) -> Vec<usize> {
        (0..self.grid.len()).filter(|&i| !self.mask[i]).collect()
    }

    /// Targets restricted to the real observations, in linear-index order.
    pub fn real_values(&self) -> Vec<f64> {
        (0..self.grid.len()).filter(|&i| self.mask[i]).map(|i| self.values[i]).collect()
    }

    /// Mean of the real targets.
    pub fn real_mean(&self) -> f64 {
        self.real_values().iter().sum::<f64>() / self.num_real as f64
    }

    /// Population variance of the real targets.
    pub fn real_variance(&self) -> f64 {
        let mean = self.real_mean();
        self.real_values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / self.num_real as f64
    }
}

/// Completes a set of scattered observations into a full grid with imaginary
/// padding. Axes are inferred as the sorted unique per-dimension coordinates
/// unless explicit axes are supplied (which may densify the grid).
pub fn complete_grid(
    points: &[Vec<f64>],
    targets: &[f64],
    axes: Option<Vec<Vec<f64>>>,
) -> Result<ObservationSet> {
    if points.is_empty() {
        return Err(Error::InvalidGrid("no observations supplied".into()));
    }
    if points.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} points but {} targets",
            points.len(),
            targets.len()
        )));
    }
    let dims = points[0].len();
    if points.iter().any(|pt| pt.len() != dims) {
        return Err(Error::ShapeMismatch("points have inconsistent dimension".into()));
    }

    let axes = match axes {
        Some(a) => a,
        None => infer_axes(points, dims),
    };
    let grid = Grid::new(axes)?;
    if grid.dims() != dims {
        return Err(Error::ShapeMismatch(format!(
            "explicit axes have {} dimensions, points have {dims}",
            grid.dims()
        )));
    }

    let n = grid.len();
    let mut values = vec![0.0; n];
    let mut mask = vec![false; n];
    for (pt, &y) in points.iter().zip(targets) {
        let mut multi = Vec::with_capacity(dims);
        for (p, &coord) in pt.iter().enumerate() {
            let idx = lookup_coordinate(grid.axis(p), coord).ok_or(Error::OffGridPoint {
                point: pt.clone(),
                coord,
                dim: p,
            })?;
            multi.push(idx);
        }
        let lin = grid.linear_index(&multi)?;
        if mask[lin] {
            return Err(Error::DuplicatePoint(multi));
        }
        mask[lin] = true;
        values[lin] = y;
    }
    ObservationSet::new(grid, values, mask)
}

fn infer_axes(points: &[Vec<f64>], dims: usize) -> Vec<Vec<f64>> {
    (0..dims)
        .map(|p| {
            let mut coords: Vec<f64> = points.iter().map(|pt| pt[p]).collect();
            coords.sort_by(|a, b| a.partial_cmp(b).unwrap());
            coords.dedup();
            coords
        })
        .collect()
}

fn lookup_coordinate(axis: &[f64], coord: f64) -> Option<usize> {
    // Exact binary search first, then a relative-tolerance pass for values that
    // went through text round-trips.
    match axis.binary_search_by(|v| v.partial_cmp(&coord).unwrap()) {
        Ok(i) => Some(i),
        Err(i) => {
            let scale = axis[axis.len() - 1].abs().max(axis[0].abs()).max(1.0);
            let tol = 1e-12 * scale;
            if i < axis.len() && (axis[i] - coord).abs() <= tol {
                Some(i)
            } else if i > 0 && (axis[i - 1] - coord).abs() <= tol {
                Some(i - 1)
            } else {
                None
            }
        }
    }
}

/// JSON header describing a grid and its observation mask; the value array
/// travels separately (CSV or binary).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridHeader {
    pub axes: Vec<Vec<f64>>,
    /// Run-length encoding of the mask: alternating run lengths starting with
    /// a (possibly zero) run of `true`.
    pub mask_rle: Vec<usize>,
}

impl GridHeader {
    pub fn from_observations(obs: &ObservationSet) -> Self {
        GridHeader {
            axes: obs.grid().axes().to_vec(),
            mask_rle: rle_encode(obs.mask()),
        }
    }

    pub fn into_observations(self, values: Vec<f64>) -> Result<ObservationSet> {
        let grid = Grid::new(self.axes)?;
        let mask = rle_decode(&self.mask_rle, grid.len())?;
        ObservationSet::new(grid, values, mask)
    }
}

pub fn rle_encode(mask: &[bool]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut current = true;
    let mut count = 0usize;
    for &m in mask {
        if m == current {
            count += 1;
        } else {
            runs.push(count);
            current = m;
            count = 1;
        }
    }
    runs.push(count);
    runs
}

pub fn rle_decode(runs: &[usize], expected_len: usize) -> Result<Vec<bool>> {
    let mut mask = Vec::with_capacity(expected_len);
    let mut current = true;
    for &run in runs {
        mask.extend(std::iter::repeat(current).take(run));
        current = !current;
    }
    if mask.len() != expected_len {
        return Err(Error::ShapeMismatch(format!(
            "mask RLE decodes to {} entries, expected {expected_len}",
            mask.len()
        )));
    }
    Ok(mask)
}
