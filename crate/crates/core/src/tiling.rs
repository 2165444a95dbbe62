//! Patch layouts over a canvas and the guided-fusion weight map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Region};

/// Default lower bound for guidance weights.
pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-4;

/// Overlapping windows that exactly tile a canvas.
///
/// Patches are ordered row-major by their top-left corner; a patch's index in
/// [`TileLayout::patches`] is its identity for RNG keying and fusion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileLayout {
    canvas: (usize, usize),
    window: (usize, usize),
    stride: (usize, usize),
    patches: Vec<Region>,
}

fn axis_positions(axis: &str, extent: usize, window: usize, stride: usize) -> Result<usize> {
    if window == 0 || extent == 0 {
        return Err(Error::config(format!("{axis}: extents must be positive")));
    }
    if window > extent {
        return Err(Error::config(format!(
            "{axis}: window {window} exceeds canvas {extent}"
        )));
    }
    if stride == 0 || stride > window {
        return Err(Error::config(format!(
            "{axis}: stride {stride} must lie in 1..={window}"
        )));
    }
    let span = extent - window;
    if !span.is_multiple_of(stride) {
        let below = window + (span / stride) * stride;
        let above = below + stride;
        return Err(Error::config(format!(
            "canvas {axis} {extent} is not tiled exactly by window {window} at stride {stride}; \
             nearest valid canvas {axis}s are {below} and {above}"
        )));
    }
    Ok(span / stride + 1)
}

impl TileLayout {
    pub fn new(canvas: (usize, usize), window: (usize, usize), stride: (usize, usize)) -> Result<Self> {
        let rows = axis_positions("height", canvas.0, window.0, stride.0)?;
        let cols = axis_positions("width", canvas.1, window.1, stride.1)?;
        let mut patches = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                patches.push(Region::new(i * stride.0, j * stride.1, window.0, window.1));
            }
        }
        Ok(Self {
            canvas,
            window,
            stride,
            patches,
        })
    }

    /// One window covering the whole canvas.
    pub fn single(shape: (usize, usize)) -> Result<Self> {
        Self::new(shape, shape, shape)
    }

    pub fn canvas(&self) -> (usize, usize) {
        self.canvas
    }

    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    pub fn stride(&self) -> (usize, usize) {
        self.stride
    }

    pub fn patches(&self) -> &[Region] {
        &self.patches
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Number of patches covering each canvas cell.
    pub fn coverage_count(&self) -> Grid {
        let (h, w) = self.canvas;
        let mut counts = Grid::zeros(h, w);
        for p in &self.patches {
            for r in p.row0..p.row_end() {
                for c in p.col0..p.col_end() {
                    counts.set(r, c, counts.get(r, c) + 1.0);
                }
            }
        }
        counts
    }

    /// Columns `c` such that a patch edge falls between `c` and `c + 1`.
    pub fn seam_columns(&self) -> Vec<usize> {
        let width = self.canvas.1;
        let mut cols: Vec<usize> = self
            .patches
            .iter()
            .flat_map(|p| {
                let left = (p.col0 > 0).then(|| p.col0 - 1);
                let right = (p.col_end() < width).then(|| p.col_end() - 1);
                left.into_iter().chain(right)
            })
            .collect();
        cols.sort_unstable();
        cols.dedup();
        cols
    }

    /// Splits canvas columns into those with maximal coverage and those
    /// covered by exactly one patch.
    pub fn overlap_columns(&self) -> (Vec<usize>, Vec<usize>) {
        let coverage = self.coverage_count();
        let counts: Vec<f64> = (0..self.canvas.1).map(|c| coverage.get(0, c)).collect();
        let max = counts.iter().cloned().fold(0.0, f64::max);
        let maximal = (0..counts.len()).filter(|&c| counts[c] == max).collect();
        let single = (0..counts.len()).filter(|&c| counts[c] == 1.0).collect();
        (maximal, single)
    }
}

/// Triangular profile along one axis: 1 at the centre cell(s), 0 at both ends.
fn tent(u: usize, len: usize) -> f64 {
    if len <= 2 {
        return 1.0;
    }
    let center = (len - 1) as f64 / 2.0;
    let dist = (u as f64 - center).abs();
    if len % 2 == 1 {
        1.0 - dist / center
    } else {
        // Even lengths have two central cells; both get weight 1.
        1.0 - (dist - 0.5) / (center - 0.5)
    }
}

/// Per-window fusion weights, peaking at the centre and floored at the rim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceMap {
    weights: Grid,
    floor: f64,
}

impl GuidanceMap {
    /// `w(i, j) = max(floor, tent(i) * tent(j))`.
    pub fn new(window: (usize, usize), floor: f64) -> Result<Self> {
        if window.0 == 0 || window.1 == 0 {
            return Err(Error::arg("guidance window dimensions must be positive"));
        }
        if !(floor > 0.0 && floor < 1.0) {
            return Err(Error::arg(format!("weight floor must be in (0, 1), got {floor}")));
        }
        let weights = Grid::from_fn(window.0, window.1, |i, j| {
            (tent(i, window.0) * tent(j, window.1)).max(floor)
        });
        Ok(Self { weights, floor })
    }

    /// All-ones map; turns guided fusion into plain averaging.
    pub fn uniform(window: (usize, usize)) -> Self {
        Self {
            weights: Grid::filled(window.0, window.1, 1.0),
            floor: 1.0,
        }
    }

    /// Arbitrary positive weights; the floor is their minimum.
    pub fn from_weights(weights: Grid) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::arg("guidance map must be non-empty"));
        }
        if let Some(w) = weights.values().iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::arg(format!("guidance weights must be positive, got {w}")));
        }
        let floor = weights.min_max().0;
        Ok(Self { weights, floor })
    }

    pub fn weights(&self) -> &Grid {
        &self.weights
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn shape(&self) -> (usize, usize) {
        self.weights.shape()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.weights.get(row, col)
    }
}
