//! Per-cell rules for reconciling overlapping patch values.
//!
//! A canvas cell covered by `N` patches receives `N` candidate samples
//! `x_i`, the matching step means `mu_i` and guidance weights `w_i`. The four
//! rules are:
//!
//! | strategy | variance  | value                                                        |
//! |----------|-----------|--------------------------------------------------------------|
//! | Mean     | Plain     | `sum x / N`                                                  |
//! | Guided   | Plain     | `sum w x / W`                                                |
//! | Mean     | Corrected | `sum x / sqrt(N) + (1 - sqrt(N)) sum mu / N`                 |
//! | Guided   | Corrected | `sum w x / sqrt(sum w^2) + (1 - W / sqrt(sum w^2)) sum w mu / W` |
//!
//! with `W = sum w`. Plain averaging of independent `x_i = mu_i + sigma z_i`
//! shrinks the variance to `sigma^2 sum w^2 / W^2`; the corrected rules keep it
//! at `sigma^2` while leaving the mean untouched. Every rule returns `x_1`
//! bit-exactly when `N = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    Mean,
    Guided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    Plain,
    Corrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub strategy: FusionStrategy,
    pub variance: VarianceMode,
}

impl FusionConfig {
    pub const MULTI_DIFFUSION: Self = Self::new(FusionStrategy::Mean, VarianceMode::Plain);
    pub const GUIDED: Self = Self::new(FusionStrategy::Guided, VarianceMode::Plain);
    pub const VARIANCE_CORRECTED: Self = Self::new(FusionStrategy::Mean, VarianceMode::Corrected);
    pub const GUIDED_VARIANCE_CORRECTED: Self =
        Self::new(FusionStrategy::Guided, VarianceMode::Corrected);

    pub const ALL: [Self; 4] = [
        Self::MULTI_DIFFUSION,
        Self::GUIDED,
        Self::VARIANCE_CORRECTED,
        Self::GUIDED_VARIANCE_CORRECTED,
    ];

    pub const fn new(strategy: FusionStrategy, variance: VarianceMode) -> Self {
        Self { strategy, variance }
    }

    /// Short method label: `md`, `gf`, `vcf`, `vcf+gf`.
    pub fn label(&self) -> &'static str {
        match (self.strategy, self.variance) {
            (FusionStrategy::Mean, VarianceMode::Plain) => "md",
            (FusionStrategy::Guided, VarianceMode::Plain) => "gf",
            (FusionStrategy::Mean, VarianceMode::Corrected) => "vcf",
            (FusionStrategy::Guided, VarianceMode::Corrected) => "vcf+gf",
        }
    }
}

/// Running sums for one cell. Contributions must be pushed in a fixed order
/// (the engine uses ascending patch index) for reproducible rounding.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CellAccumulator {
    count: u32,
    first: f64,
    sum_x: f64,
    sum_mu: f64,
    sum_w: f64,
    sum_w2: f64,
    sum_wx: f64,
    sum_wmu: f64,
}

impl CellAccumulator {
    #[inline]
    pub fn push(&mut self, x: f64, mu: f64, w: f64) {
        if self.count == 0 {
            self.first = x;
        }
        self.count += 1;
        self.sum_x += x;
        self.sum_mu += mu;
        self.sum_w += w;
        self.sum_w2 += w * w;
        self.sum_wx += w * x;
        self.sum_wmu += w * mu;
    }

    pub fn count(&self) -> usize {
        self.count as usize
    }

    #[inline]
    pub fn mean(&self) -> f64 {
        self.sum_x / self.count as f64
    }

    #[inline]
    pub fn guided(&self) -> f64 {
        if self.count == 1 {
            return self.first;
        }
        self.sum_wx / self.sum_w
    }

    #[inline]
    pub fn vcf_uniform(&self) -> f64 {
        if self.count == 1 {
            return self.first;
        }
        let n = self.count as f64;
        let root = n.sqrt();
        self.sum_x / root + (1.0 - root) * self.sum_mu / n
    }

    #[inline]
    pub fn vcf_weighted(&self) -> f64 {
        if self.count == 1 {
            return self.first;
        }
        let norm = self.sum_w2.sqrt();
        // W / norm written as norm * (W / sum w^2): with unit weights this is
        // sqrt(N) exactly, matching the uniform rule bit for bit.
        let ratio = norm * (self.sum_w / self.sum_w2);
        self.sum_wx / norm + (1.0 - ratio) * self.sum_wmu / self.sum_w
    }

    #[inline]
    pub fn finish(&self, config: FusionConfig) -> f64 {
        match (config.strategy, config.variance) {
            (FusionStrategy::Mean, VarianceMode::Plain) => self.mean(),
            (FusionStrategy::Guided, VarianceMode::Plain) => self.guided(),
            (FusionStrategy::Mean, VarianceMode::Corrected) => self.vcf_uniform(),
            (FusionStrategy::Guided, VarianceMode::Corrected) => self.vcf_weighted(),
        }
    }
}

fn check_inputs(xs: &[f64], mus: Option<&[f64]>, ws: Option<&[f64]>) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::arg("fusion needs at least one value"));
    }
    if let Some(mus) = mus {
        if mus.len() != xs.len() {
            return Err(Error::arg(format!(
                "{} samples but {} means",
                xs.len(),
                mus.len()
            )));
        }
    }
    if let Some(ws) = ws {
        if ws.len() != xs.len() {
            return Err(Error::arg(format!(
                "{} samples but {} weights",
                xs.len(),
                ws.len()
            )));
        }
        if let Some(w) = ws.iter().find(|&&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::arg(format!("fusion weights must be positive, got {w}")));
        }
    }
    Ok(())
}

fn accumulate(xs: &[f64], mus: Option<&[f64]>, ws: Option<&[f64]>) -> CellAccumulator {
    let mut acc = CellAccumulator::default();
    for (i, &x) in xs.iter().enumerate() {
        let mu = mus.map_or(x, |m| m[i]);
        let w = ws.map_or(1.0, |w| w[i]);
        acc.push(x, mu, w);
    }
    acc
}

pub fn fuse_mean(xs: &[f64]) -> Result<f64> {
    check_inputs(xs, None, None)?;
    Ok(accumulate(xs, None, None).mean())
}

pub fn fuse_guided(xs: &[f64], ws: &[f64]) -> Result<f64> {
    check_inputs(xs, None, Some(ws))?;
    Ok(accumulate(xs, None, Some(ws)).guided())
}

pub fn fuse_vcf_uniform(xs: &[f64], mus: &[f64]) -> Result<f64> {
    check_inputs(xs, Some(mus), None)?;
    Ok(accumulate(xs, Some(mus), None).vcf_uniform())
}

pub fn fuse_vcf_weighted(xs: &[f64], mus: &[f64], ws: &[f64]) -> Result<f64> {
    check_inputs(xs, Some(mus), Some(ws))?;
    Ok(accumulate(xs, Some(mus), Some(ws)).vcf_weighted())
}

/// Dispatches to the rule selected by `config`; `ws` is ignored for Mean.
pub fn fuse(config: FusionConfig, xs: &[f64], mus: &[f64], ws: &[f64]) -> Result<f64> {
    check_inputs(xs, Some(mus), Some(ws))?;
    let acc = match config.strategy {
        FusionStrategy::Mean => accumulate(xs, Some(mus), None),
        FusionStrategy::Guided => accumulate(xs, Some(mus), Some(ws)),
    };
    Ok(acc.finish(config))
}

/// Coefficients `a_i` on the samples `x_i` in the fused value.
pub fn sample_coefficients(config: FusionConfig, ws: &[f64]) -> Vec<f64> {
    let n = ws.len();
    if n == 1 {
        return vec![1.0];
    }
    let weights: Vec<f64> = match config.strategy {
        FusionStrategy::Mean => vec![1.0; n],
        FusionStrategy::Guided => ws.to_vec(),
    };
    let total: f64 = weights.iter().sum();
    let norm = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
    let denom = match config.variance {
        VarianceMode::Plain => total,
        VarianceMode::Corrected => norm,
    };
    weights.iter().map(|w| w / denom).collect()
}

/// Variance of the fused value relative to `sigma^2` when each
/// `x_i = mu_i + sigma z_i` with independent standard-normal `z_i`:
/// `sum a_i^2` over the sample coefficients.
pub fn variance_gain(config: FusionConfig, ws: &[f64]) -> f64 {
    sample_coefficients(config, ws).iter().map(|a| a * a).sum()
}
