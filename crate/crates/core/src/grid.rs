//! Dense single-channel 2-D fields and rectangular windows into them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// A row-major `height x width` field of `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

/// A rectangular window `(row0, col0, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub row0: usize,
    pub col0: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    pub fn new(row0: usize, col0: usize, height: usize, width: usize) -> Self {
        Self {
            row0,
            col0,
            height,
            width,
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::new(0, 0, height, width)
    }

    pub fn row_end(&self) -> usize {
        self.row0 + self.height
    }

    pub fn col_end(&self) -> usize {
        self.col0 + self.width
    }

    pub fn fits_in(&self, height: usize, width: usize) -> bool {
        self.row_end() <= height && self.col_end() <= width
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row0 && row < self.row_end() && col >= self.col0 && col < self.col_end()
    }
}

impl Grid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::arg(format!(
                "{} values cannot fill a {height}x{width} grid",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Builds a grid by evaluating `f(row, col)` at every cell.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.width + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.width..(row + 1) * self.width]
    }

    pub fn full_region(&self) -> Region {
        Region::full(self.height, self.width)
    }

    pub fn check_region(&self, region: &Region) -> Result<()> {
        if region.fits_in(self.height, self.width) {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                region: *region,
                height: self.height,
                width: self.width,
            })
        }
    }

    pub fn ensure_same_shape(&self, other: &Grid) -> Result<()> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            })
        }
    }

    /// Copies the cells of `region` into a new grid.
    pub fn crop(&self, region: &Region) -> Result<Grid> {
        self.check_region(region)?;
        let mut values = Vec::with_capacity(region.height * region.width);
        for r in region.row0..region.row_end() {
            let start = r * self.width + region.col0;
            values.extend_from_slice(&self.values[start..start + region.width]);
        }
        Ok(Grid {
            height: region.height,
            width: region.width,
            values,
        })
    }

    /// Writes `patch` into `region`, overwriting what was there.
    pub fn scatter(&mut self, region: &Region, patch: &Grid) -> Result<()> {
        self.check_region(region)?;
        if patch.shape() != (region.height, region.width) {
            return Err(Error::ShapeMismatch {
                expected: (region.height, region.width),
                got: patch.shape(),
            });
        }
        for (pr, r) in (region.row0..region.row_end()).enumerate() {
            let start = r * self.width + region.col0;
            self.values[start..start + region.width].copy_from_slice(patch.row(pr));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two equally shaped grids.
    pub fn zip_map(&self, other: &Grid, f: impl Fn(f64, f64) -> f64) -> Result<Grid> {
        self.ensure_same_shape(other)?;
        Ok(Grid {
            height: self.height,
            width: self.width,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, factor: f64) -> Grid {
        self.map(|v| v * factor)
    }

    pub fn dot(&self, other: &Grid) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Draws an i.i.d. standard-normal grid from `stream`.
pub fn gaussian_grid(height: usize, width: usize, stream: RngStream) -> Result<Grid> {
    if height == 0 || width == 0 {
        return Err(Error::arg(format!(
            "gaussian grid needs positive dimensions, got {height}x{width}"
        )));
    }
    let values = stream.normals(height * width);
    Ok(Grid {
        height,
        width,
        values,
    })
}
