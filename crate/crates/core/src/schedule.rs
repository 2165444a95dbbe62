//! Variance schedules and the closed-form forward process.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Reverse-process noise level choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaVariant {
    /// `sigma_t^2 = beta_t`
    Beta,
    /// `sigma_t^2 = (1 - abar_{t-1}) / (1 - abar_t) * beta_t`
    TildeBeta,
}

/// Discrete schedule over timesteps `1..=T`. Index 0 is the clean-data
/// convention with `abar_0 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Endpoints of the reference 1000-step linear schedule.
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_STEPS: usize = 1000;

impl NoiseSchedule {
    /// Linearly spaced betas from `beta_start` to `beta_end`, both inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::arg("schedule needs at least one timestep"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::arg(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
            )));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            let span = beta_end - beta_start;
            (0..steps)
                .map(|i| beta_start + span * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Ok(Self::from_betas(betas))
    }

    /// The 1000-step reference schedule rescaled to `steps` steps, keeping
    /// the total noise budget (sum of betas) and so `abar_T` near zero.
    pub fn scaled_linear(steps: usize) -> Result<Self> {
        let scale = DEFAULT_STEPS as f64 / steps.max(1) as f64;
        let end = (DEFAULT_BETA_END * scale).min(0.999);
        let start = (DEFAULT_BETA_START * scale).min(end);
        Self::linear(steps, start, end)
    }

    fn from_betas(betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = 1.0;
        for a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Self {
            betas,
            alphas,
            alpha_bars,
        }
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::arg(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )))
        } else {
            Ok(())
        }
    }

    /// `beta_t` for `1 <= t <= T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `abar_t`, with `abar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn sigma(&self, t: usize, variant: SigmaVariant) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.sigma_sq(t, variant).sqrt())
    }

    pub(crate) fn sigma_sq(&self, t: usize, variant: SigmaVariant) -> f64 {
        let beta = self.beta(t);
        match variant {
            SigmaVariant::Beta => beta,
            SigmaVariant::TildeBeta => {
                (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * beta
            }
        }
    }

    /// `sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps`; `t = 0` returns `x0`.
    pub fn forward_diffuse(&self, x0: &Grid, t: usize, eps: &Grid) -> Result<Grid> {
        if t > self.steps() {
            return Err(Error::arg(format!(
                "timestep {t} outside 0..={}",
                self.steps()
            )));
        }
        let ab = self.alpha_bar(t);
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        x0.zip_map(eps, |x, e| sa * x + sn * e)
    }
}
