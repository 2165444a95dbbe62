//! One-shot style alignment of the initial canvas noise.
//!
//! Each non-overlapping window of `X_T` is rotated toward a shared reference
//! noise by spherical interpolation, once, before the first denoising step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gaussian_grid, Grid, Region};
use crate::rng::{Purpose, RngStream};

/// Angles closer than this to 0 fall back to linear interpolation; angles
/// this close to pi are rejected.
const ANGLE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleAlignConfig {
    alpha: f64,
    z_ref: Grid,
}

impl StyleAlignConfig {
    pub fn new(alpha: f64, z_ref: Grid) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::arg(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        if z_ref.is_empty() {
            return Err(Error::arg("reference noise must be non-empty"));
        }
        Ok(Self { alpha, z_ref })
    }

    /// Reference noise drawn from the `StyleRef` stream of `seed`.
    pub fn with_seeded_reference(alpha: f64, window: (usize, usize), seed: u64) -> Result<Self> {
        let z_ref = gaussian_grid(window.0, window.1, RngStream::new(seed, Purpose::StyleRef, 0, 0))?;
        Self::new(alpha, z_ref)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn reference(&self) -> &Grid {
        &self.z_ref
    }

    pub fn window(&self) -> (usize, usize) {
        self.z_ref.shape()
    }
}

/// Spherical interpolation between `p` and `q` treated as flat vectors.
///
/// Returns `p` at `alpha = 0` and `q` at `alpha = 1` exactly.
pub fn slerp(p: &Grid, q: &Grid, alpha: f64) -> Result<Grid> {
    p.ensure_same_shape(q)?;
    let (np, nq) = (p.norm(), q.norm());
    if np == 0.0 || nq == 0.0 {
        return Err(Error::arg("slerp endpoints must have non-zero norm"));
    }
    if alpha == 0.0 {
        return Ok(p.clone());
    }
    if alpha == 1.0 {
        return Ok(q.clone());
    }
    let cos = (p.dot(q)? / (np * nq)).clamp(-1.0, 1.0);
    let omega = cos.acos();
    if omega < ANGLE_EPS {
        return p.zip_map(q, |a, b| (1.0 - alpha) * a + alpha * b);
    }
    if std::f64::consts::PI - omega < ANGLE_EPS {
        return Err(Error::arg(
            "slerp endpoints are antipodal; the interpolation path is undefined",
        ));
    }
    let s = omega.sin();
    let (cp, cq) = (((1.0 - alpha) * omega).sin() / s, (alpha * omega).sin() / s);
    p.zip_map(q, |a, b| cp * a + cq * b)
}

/// Non-overlapping window regions tiling `canvas`.
pub fn disjoint_windows(canvas: (usize, usize), window: (usize, usize)) -> Result<Vec<Region>> {
    if window.0 == 0 || window.1 == 0 || !canvas.0.is_multiple_of(window.0) || !canvas.1.is_multiple_of(window.1) {
        return Err(Error::config(format!(
            "canvas {canvas:?} is not divisible into {window:?} style-alignment windows"
        )));
    }
    let mut regions = Vec::new();
    for r in (0..canvas.0).step_by(window.0) {
        for c in (0..canvas.1).step_by(window.1) {
            regions.push(Region::new(r, c, window.0, window.1));
        }
    }
    Ok(regions)
}

/// Replaces every non-overlapping crop `x_i` of `canvas_noise` by
/// `slerp(x_i, z_ref, alpha)`.
pub fn apply_style_alignment(canvas_noise: &Grid, cfg: &StyleAlignConfig) -> Result<Grid> {
    let regions = disjoint_windows(canvas_noise.shape(), cfg.window())?;
    let mut out = canvas_noise.clone();
    for region in &regions {
        let crop = canvas_noise.crop(region)?;
        out.scatter(region, &slerp(&crop, &cfg.z_ref, cfg.alpha)?)?;
    }
    Ok(out)
}

/// Cosine similarity of two equally shaped grids.
pub fn cosine_similarity(a: &Grid, b: &Grid) -> Result<f64> {
    Ok(a.dot(b)? / (a.norm() * b.norm()))
}

/// Mean cosine similarity over all unordered pairs of disjoint windows.
pub fn mean_pairwise_cosine(canvas: &Grid, window: (usize, usize)) -> Result<f64> {
    let crops: Vec<Grid> = disjoint_windows(canvas.shape(), window)?
        .iter()
        .map(|r| canvas.crop(r))
        .collect::<Result<_>>()?;
    if crops.len() < 2 {
        return Err(Error::arg("pairwise similarity needs at least two windows"));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..crops.len() {
        for j in i + 1..crops.len() {
            total += cosine_similarity(&crops[i], &crops[j])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}
