use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use tilefuse::Grid;

/// Affine map applied when quantising: `round(255 * (v - min) / (max - min))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrayMapping {
    pub min: f64,
    pub max: f64,
}

pub fn encode(grid: &Grid) -> (Vec<u8>, GrayMapping) {
    let (min, max) = grid.min_max();
    let (h, w) = grid.shape();
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    let span = max - min;
    bytes.extend(grid.values().iter().map(|v| {
        if span > 0.0 {
            (255.0 * (v - min) / span).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    (bytes, GrayMapping { min, max })
}

pub fn write(path: &Path, grid: &Grid) -> Result<GrayMapping> {
    let (bytes, mapping) = encode(grid);
    let mut f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(&bytes)?;
    Ok(mapping)
}
