use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use tilefuse::{
    Denoiser, FusionConfig, FusionStrategy, GmmComponent, GmmPrior, GpPrior, GuidanceMap,
    NoiseSchedule, NoiseSharing, SamplerKind, SigmaVariant, StyleAlignConfig, TileLayout,
    VarianceMode,
};

use crate::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SamplerName {
    Ddpm,
    Ddim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SigmaName {
    Beta,
    Tilde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FusionName {
    Md,
    Gf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorConfig {
    Gp { length_scale: f64 },
    Gmm { components: Vec<GmmComponent> },
    Zero,
    Constant { value: f64 },
}

/// Everything a command needs, after merging the config file and flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Length `T` of the noise schedule.
    pub timesteps: usize,
    /// Linear beta endpoints; when absent the default endpoints are rescaled
    /// by `1000 / T`.
    pub beta_start: Option<f64>,
    pub beta_end: Option<f64>,
    pub sampler: SamplerName,
    /// Sampling steps. DDPM always runs every schedule step.
    pub steps: Option<usize>,
    pub sigma: SigmaName,
    pub prior: PriorConfig,
    /// Canvas `[height, width]`; absent means a single window-sized patch.
    pub canvas: Option<[usize; 2]>,
    pub window: [usize; 2],
    pub stride: Option<[usize; 2]>,
    pub guidance_floor: f64,
    pub fusion: FusionName,
    pub vcf: bool,
    pub sa_alpha: f64,
    pub sa_ref_seed: Option<u64>,
    pub shared_noise: bool,
    pub seed: u64,
    pub num_seeds: usize,
    /// Monte-Carlo trials for the single-step variance experiment.
    pub trials: usize,
    /// Timestep of the single-step variance experiment; defaults to `T / 2`.
    pub variance_t: Option<usize>,
    /// Full-chain runs per fusion mode in the variance experiment.
    pub chain_runs: usize,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            timesteps: 100,
            beta_start: None,
            beta_end: None,
            sampler: SamplerName::Ddim,
            steps: None,
            sigma: SigmaName::Beta,
            prior: PriorConfig::Gp { length_scale: 8.0 },
            canvas: None,
            window: [64, 64],
            stride: None,
            guidance_floor: tilefuse::tiling::DEFAULT_WEIGHT_FLOOR,
            fusion: FusionName::Gf,
            vcf: false,
            sa_alpha: 0.0,
            sa_ref_seed: None,
            shared_noise: false,
            seed: 0,
            num_seeds: 1,
            trials: 10_000,
            variance_t: None,
            chain_runs: 100,
            output: PathBuf::from("out"),
        }
    }
}

/// Engine objects built from a validated [`RunConfig`].
pub struct Resolved {
    pub schedule: NoiseSchedule,
    pub kind: SamplerKind,
    pub denoiser: Box<dyn Denoiser>,
    pub layout: TileLayout,
    pub guidance: GuidanceMap,
    pub fusion: FusionConfig,
    pub style: Option<StyleAlignConfig>,
    pub noise: NoiseSharing,
    pub warnings: Vec<String>,
}

impl Resolved {
    pub fn sampler(&self) -> tilefuse::JointSampler<'_> {
        tilefuse::JointSampler::new(
            self.denoiser.as_ref(),
            &self.schedule,
            self.kind,
            &self.layout,
            &self.guidance,
            self.fusion,
        )
        .with_style(self.style.as_ref())
        .with_noise(self.noise)
    }
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> anyhow::Error {
    ConfigError(format!("{field}: {msg}")).into()
}

fn wrap<T>(field: &str, r: tilefuse::Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        tilefuse::Error::Numerical(_) => anyhow::Error::from(e),
        other => invalid(field, other),
    })
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())).into())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.num_seeds as u64).map(|k| self.seed + k).collect()
    }

    pub fn stride(&self) -> [usize; 2] {
        self.stride.unwrap_or(self.window)
    }

    pub fn canvas(&self) -> [usize; 2] {
        self.canvas.unwrap_or(self.window)
    }

    /// Fills every optional field with the value it resolves to, so a
    /// written config replays exactly.
    pub fn normalized(mut self) -> Self {
        self.steps.get_or_insert(match self.sampler {
            SamplerName::Ddpm => self.timesteps,
            SamplerName::Ddim => tilefuse::sampler::DEFAULT_DDIM_STEPS,
        });
        self.canvas.get_or_insert(self.window);
        self.stride.get_or_insert(self.window);
        self.variance_t.get_or_insert((self.timesteps / 2).max(1));
        if self.sa_alpha > 0.0 {
            self.sa_ref_seed.get_or_insert(self.seed);
        }
        self
    }

    /// Checks every cross-field constraint and builds the engine objects.
    pub fn resolve(&self) -> Result<Resolved> {
        let mut warnings = Vec::new();
        let schedule = match (self.beta_start, self.beta_end) {
            (None, None) => wrap("timesteps", NoiseSchedule::scaled_linear(self.timesteps))?,
            (Some(a), Some(b)) => wrap("beta_start", NoiseSchedule::linear(self.timesteps, a, b))?,
            _ => return Err(invalid("beta_start", "beta_start and beta_end must be set together")),
        };
        let kind = match self.sampler {
            SamplerName::Ddpm => {
                if let Some(s) = self.steps.filter(|&s| s != self.timesteps) {
                    return Err(invalid(
                        "steps",
                        format!("ddpm runs every schedule step; got {s} for timesteps {}", self.timesteps),
                    ));
                }
                SamplerKind::Ddpm(match self.sigma {
                    SigmaName::Beta => SigmaVariant::Beta,
                    SigmaName::Tilde => SigmaVariant::TildeBeta,
                })
            }
            SamplerName::Ddim => SamplerKind::Ddim {
                steps: self.steps.unwrap_or(tilefuse::sampler::DEFAULT_DDIM_STEPS),
            },
        };
        wrap("steps", kind.timesteps(&schedule))?;

        let window = (self.window[0], self.window[1]);
        let canvas = self.canvas();
        let stride = self.stride();
        let layout = wrap(
            "canvas",
            TileLayout::new((canvas[0], canvas[1]), window, (stride[0], stride[1])),
        )?;
        let guidance = wrap("guidance_floor", GuidanceMap::new(window, self.guidance_floor))?;
        let denoiser: Box<dyn Denoiser> = match &self.prior {
            PriorConfig::Gp { length_scale } => Box::new(wrap(
                "prior.length_scale",
                GpPrior::squared_exponential(window.0, window.1, *length_scale),
            )?),
            PriorConfig::Gmm { components } => {
                Box::new(wrap("prior.components", GmmPrior::new(components.clone()))?)
            }
            PriorConfig::Zero => Box::new(tilefuse::ZeroDenoiser),
            PriorConfig::Constant { value } => Box::new(tilefuse::ConstantDenoiser { value: *value }),
        };
        let fusion = FusionConfig::new(
            match self.fusion {
                FusionName::Md => FusionStrategy::Mean,
                FusionName::Gf => FusionStrategy::Guided,
            },
            if self.vcf { VarianceMode::Corrected } else { VarianceMode::Plain },
        );
        if self.vcf && !kind.is_stochastic() {
            warnings.push(
                "variance correction has no effect under the deterministic ddim sampler".to_string(),
            );
        }
        let style = if self.sa_alpha > 0.0 {
            let ref_seed = self.sa_ref_seed.unwrap_or(self.seed);
            let cfg = wrap(
                "sa_alpha",
                StyleAlignConfig::with_seeded_reference(self.sa_alpha, window, ref_seed),
            )?;
            wrap("canvas", tilefuse::style::disjoint_windows((canvas[0], canvas[1]), window))?;
            Some(cfg)
        } else if self.sa_alpha < 0.0 {
            return Err(invalid("sa_alpha", format!("must lie in [0, 1], got {}", self.sa_alpha)));
        } else {
            None
        };
        if self.num_seeds == 0 {
            return Err(invalid("num_seeds", "must be at least 1"));
        }
        let noise = if self.shared_noise {
            NoiseSharing::Shared
        } else {
            NoiseSharing::Independent
        };
        let resolved = Resolved {
            schedule,
            kind,
            denoiser,
            layout,
            guidance,
            fusion,
            style,
            noise,
            warnings,
        };
        wrap("window", resolved.sampler().validate())?;
        Ok(resolved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_to_single_patch() {
        let r = RunConfig::default().resolve().unwrap();
        assert_eq!(r.layout.len(), 1);
        assert_eq!(r.kind, SamplerKind::Ddim { steps: 50 });
    }

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig {
            prior: PriorConfig::Gmm {
                components: vec![GmmComponent { weight: 1.0, mean: 1.0, std: 0.5 }],
            },
            canvas: Some([64, 448]),
            stride: Some([48, 48]),
            ..RunConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"canvass": [1, 2]}"#).is_err());
    }

    #[test]
    fn ddpm_step_count_must_match_schedule() {
        let cfg = RunConfig {
            sampler: SamplerName::Ddpm,
            steps: Some(50),
            ..RunConfig::default()
        };
        let err = cfg.resolve().err().unwrap();
        assert!(err.to_string().starts_with("steps:"), "{err}");
    }

    #[test]
    fn normalized_config_resolves_identically() {
        let cfg = RunConfig {
            sampler: SamplerName::Ddpm,
            sa_alpha: 0.4,
            seed: 9,
            ..RunConfig::default()
        };
        let n = cfg.clone().normalized();
        assert_eq!(n.steps, Some(100));
        assert_eq!(n.sa_ref_seed, Some(9));
        assert_eq!(n.clone().normalized(), n);
        let (a, b) = (cfg.resolve().unwrap(), n.resolve().unwrap());
        assert_eq!(a.kind, b.kind);
        assert_eq!(a.style, b.style);
        assert_eq!(a.layout, b.layout);
    }

    #[test]
    fn vcf_under_ddim_warns() {
        let cfg = RunConfig {
            vcf: true,
            ..RunConfig::default()
        };
        assert_eq!(cfg.resolve().unwrap().warnings.len(), 1);
    }
}
