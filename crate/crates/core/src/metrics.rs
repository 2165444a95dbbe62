//! Seam, moment, distribution-fit and structural-similarity measurements.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Named scalars and per-pixel maps produced by an experiment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scalars: BTreeMap<String, f64>,
    pub maps: BTreeMap<String, Grid>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: f64) -> Result<()> {
        let name = name.into();
        if !value.is_finite() {
            return Err(Error::Numerical(format!("metric {name} is not finite: {value}")));
        }
        self.scalars.insert(name, value);
        Ok(())
    }

    pub fn insert_map(&mut self, name: impl Into<String>, map: Grid) -> Result<()> {
        let name = name.into();
        if !map.is_finite() {
            return Err(Error::Numerical(format!("map {name} has non-finite cells")));
        }
        self.maps.insert(name, map);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.scalars.get(name).copied()
    }

    /// `name,value` lines for the scalar metrics, sorted by name.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in &self.scalars {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }
}

/// Mean absolute horizontal difference across the seam columns minus the
/// same mean over every other column pair. Column `c` denotes the pair
/// `(c, c + 1)`.
pub fn seam_energy(grid: &Grid, boundary_cols: &[usize]) -> Result<f64> {
    if boundary_cols.is_empty() {
        return Err(Error::arg("seam energy needs at least one boundary column"));
    }
    let (h, w) = grid.shape();
    if let Some(&c) = boundary_cols.iter().find(|&&c| c + 1 >= w) {
        return Err(Error::arg(format!(
            "boundary column {c} has no right neighbour in a width-{w} grid"
        )));
    }
    let mut is_boundary = vec![false; w.saturating_sub(1)];
    for &c in boundary_cols {
        is_boundary[c] = true;
    }
    let (mut seam_sum, mut seam_n) = (0.0, 0usize);
    let (mut base_sum, mut base_n) = (0.0, 0usize);
    for r in 0..h {
        let row = grid.row(r);
        for c in 0..w - 1 {
            let d = (row[c + 1] - row[c]).abs();
            if is_boundary[c] {
                seam_sum += d;
                seam_n += 1;
            } else {
                base_sum += d;
                base_n += 1;
            }
        }
    }
    let seam = seam_sum / seam_n as f64;
    let base = if base_n == 0 { 0.0 } else { base_sum / base_n as f64 };
    Ok(seam - base)
}

/// Per-pixel sample mean and unbiased sample variance.
pub fn ensemble_moments(samples: &[Grid]) -> Result<(Grid, Grid)> {
    if samples.len() < 2 {
        return Err(Error::arg(format!(
            "ensemble moments need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let (h, w) = samples[0].shape();
    for s in &samples[1..] {
        samples[0].ensure_same_shape(s)?;
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; h * w];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.values()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; h * w];
    for s in samples {
        for ((acc, v), m) in var.iter_mut().zip(s.values()).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n - 1.0);
    Ok((Grid::from_vec(h, w, mean)?, Grid::from_vec(h, w, var)?))
}

/// Streaming per-pixel moments (Welford), for ensembles too large to hold.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    count: usize,
    mean: Grid,
    m2: Grid,
}

impl MomentAccumulator {
    pub fn new(shape: (usize, usize)) -> Self {
        Self {
            count: 0,
            mean: Grid::zeros(shape.0, shape.1),
            m2: Grid::zeros(shape.0, shape.1),
        }
    }

    pub fn push(&mut self, sample: &Grid) -> Result<()> {
        self.mean.ensure_same_shape(sample)?;
        self.count += 1;
        let n = self.count as f64;
        let means = self.mean.values_mut();
        let m2 = self.m2.values_mut();
        for ((m, q), &x) in means.iter_mut().zip(m2.iter_mut()).zip(sample.values()) {
            let d = x - *m;
            *m += d / n;
            *q += d * (x - *m);
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(&self) -> Result<(Grid, Grid)> {
        if self.count < 2 {
            return Err(Error::arg("ensemble moments need at least 2 samples"));
        }
        Ok((self.mean.clone(), self.m2.scale(1.0 / (self.count - 1) as f64)))
    }
}

/// One-sample Kolmogorov-Smirnov distance `sup |F_n(x) - F(x)|`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::arg("KS statistic needs at least one sample"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d.clamp(0.0, 1.0))
}

/// Survival function of the limiting Kolmogorov distribution,
/// `P(K > x) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2)`.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        // The alternating series converges too slowly here; the value is 1
        // to double precision.
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * x * x).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Critical KS distance at significance `alpha` for `n` samples, using
/// Stephens' finite-sample scaling `(sqrt(n) + 0.12 + 0.11 / sqrt(n)) D`.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    let (mut lo, mut hi) = (0.2, 5.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_survival(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = (n as f64).sqrt();
    0.5 * (lo + hi) / (root + 0.12 + 0.11 / root)
}

/// Two-sided exact sign test p-value for `wins` successes out of `trials`
/// under `p = 1/2`.
pub fn sign_test_p_value(wins: usize, trials: usize) -> f64 {
    if trials == 0 {
        return 1.0;
    }
    let k = wins.min(trials - wins);
    // Tail in log space: sum_{i<=k} C(n, i) / 2^n
    let ln_half = -(trials as f64) * std::f64::consts::LN_2;
    let mut ln_c = 0.0;
    let mut tail = 0.0;
    for i in 0..=k {
        if i > 0 {
            ln_c += ((trials - i + 1) as f64).ln() - (i as f64).ln();
        }
        tail += (ln_c + ln_half).exp();
    }
    (2.0 * tail).min(1.0)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "valid" Gaussian filtering (no padding).
fn filter_valid(values: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; h * ow];
    for r in 0..h {
        let row = &values[r * w..(r + 1) * w];
        for c in 0..ow {
            horiz[r * ow + c] = k.iter().zip(&row[c..c + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * horiz[(r + i) * ow + c];
            }
            out[r * ow + c] = acc;
        }
    }
    out
}

/// Mean SSIM over all 11x11 Gaussian-weighted windows (sigma 1.5), with the
/// dynamic range taken from the joint min/max of both inputs.
pub fn ssim(a: &Grid, b: &Grid) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (h, w) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::arg(format!(
            "SSIM needs grids of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let (lo_a, hi_a) = a.min_max();
    let (lo_b, hi_b) = b.min_max();
    let range = hi_a.max(hi_b) - lo_a.min(lo_b);
    let range = if range > 0.0 { range } else { 1.0 };
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);

    let k = gaussian_kernel();
    let xx: Vec<f64> = a.values().iter().map(|v| v * v).collect();
    let yy: Vec<f64> = b.values().iter().map(|v| v * v).collect();
    let xy: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x * y).collect();
    let mu_x = filter_valid(a.values(), h, w, &k);
    let mu_y = filter_valid(b.values(), h, w, &k);
    let e_xx = filter_valid(&xx, h, w, &k);
    let e_yy = filter_valid(&yy, h, w, &k);
    let e_xy = filter_valid(&xy, h, w, &k);

    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = e_xx[i] - mx * mx;
        let vy = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
        let den = (mx * mx + my * my + c1) * (vx + vy + c2);
        total += num / den;
    }
    Ok(total / mu_x.len() as f64)
}
