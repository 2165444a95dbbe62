mod commands;
mod config;
mod pgm;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tilefuse::GmmComponent;

use config::{FusionName, PriorConfig, RunConfig, SamplerName, SigmaName};

/// A configuration problem found before any computation started.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Parser)]
#[command(name = "tilefuse", version, about = "Joint tiled diffusion sampling with exact denoisers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one image per seed.
    Sample(Overrides),
    /// Like `sample`, but the canvas layout must be given.
    Panorama(Overrides),
    /// Measure per-step and full-chain variance for every fusion mode.
    VarianceTest(Overrides),
    /// Compare seam energy of the fusion rules over paired seeds.
    SeamTest(Overrides),
    /// Sweep the style-alignment ratio.
    StyleSweep {
        #[command(flatten)]
        overrides: Overrides,
        /// Comma-separated ratios; defaults to 0.0, 0.1, ..., 1.0.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        /// Also generate each canvas and report the pairwise SSIM of its crops.
        #[arg(long)]
        sample: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PriorName {
    Gp,
    Gmm,
    Zero,
    Constant,
}

/// Flags override the matching fields of the config file.
#[derive(clap::Args)]
struct Overrides {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    sampler: Option<SamplerName>,
    /// Sampling steps (DDIM); DDPM always uses every schedule step.
    #[arg(long)]
    steps: Option<usize>,
    /// Schedule length T.
    #[arg(long)]
    timesteps: Option<usize>,
    #[arg(long)]
    sigma: Option<SigmaName>,
    #[arg(long)]
    fusion: Option<FusionName>,
    #[arg(long)]
    vcf: bool,
    /// HxW, or a single number for a square window.
    #[arg(long, value_parser = parse_dims)]
    window: Option<[usize; 2]>,
    #[arg(long, value_parser = parse_dims)]
    stride: Option<[usize; 2]>,
    #[arg(long, value_parser = parse_dims)]
    canvas: Option<[usize; 2]>,
    #[arg(long)]
    guidance_floor: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    num_seeds: Option<usize>,
    #[arg(long)]
    sa_alpha: Option<f64>,
    #[arg(long)]
    sa_ref_seed: Option<u64>,
    /// One canvas-wide noise draw per step instead of one per patch.
    #[arg(long)]
    shared_noise: bool,
    #[arg(long)]
    prior: Option<PriorName>,
    #[arg(long)]
    length_scale: Option<f64>,
    #[arg(long)]
    gmm_mean: Option<f64>,
    #[arg(long)]
    gmm_std: Option<f64>,
    #[arg(long)]
    constant: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    variance_t: Option<usize>,
    #[arg(long)]
    chain_runs: Option<usize>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn parse_dims(s: &str) -> Result<[usize; 2], String> {
    let parse = |p: &str| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}"));
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok([parse(h)?, parse(w)?]),
        None => {
            let n = parse(s)?;
            Ok([n, n])
        }
    }
}

impl Overrides {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        self.resolve_with(false)
    }

    fn resolve_with(&self, require_canvas: bool) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() { cfg.$field = v; }
            )*};
        }
        set!(sampler, timesteps, sigma, fusion, window, guidance_floor, seed, num_seeds);
        set!(sa_alpha, trials, chain_runs, output);
        if self.steps.is_some() {
            cfg.steps = self.steps;
        }
        if self.stride.is_some() {
            cfg.stride = self.stride;
        }
        if self.canvas.is_some() {
            cfg.canvas = self.canvas;
        }
        if self.sa_ref_seed.is_some() {
            cfg.sa_ref_seed = self.sa_ref_seed;
        }
        if self.variance_t.is_some() {
            cfg.variance_t = self.variance_t;
        }
        cfg.vcf |= self.vcf;
        cfg.shared_noise |= self.shared_noise;
        self.apply_prior(&mut cfg)?;
        if require_canvas && cfg.canvas.is_none() {
            return Err(ConfigError("canvas: panorama requires an explicit canvas layout".into()).into());
        }
        Ok(cfg.normalized())
    }

    fn apply_prior(&self, cfg: &mut RunConfig) -> anyhow::Result<()> {
        let kind = match (self.prior, &cfg.prior) {
            (Some(k), _) => k,
            (None, PriorConfig::Gp { .. }) => PriorName::Gp,
            (None, PriorConfig::Gmm { .. }) => PriorName::Gmm,
            (None, PriorConfig::Zero) => PriorName::Zero,
            (None, PriorConfig::Constant { .. }) => PriorName::Constant,
        };
        let touched = self.prior.is_some()
            || self.length_scale.is_some()
            || self.gmm_mean.is_some()
            || self.gmm_std.is_some()
            || self.constant.is_some();
        if !touched {
            return Ok(());
        }
        cfg.prior = match kind {
            PriorName::Gp => {
                let current = match cfg.prior {
                    PriorConfig::Gp { length_scale } => length_scale,
                    _ => 8.0,
                };
                PriorConfig::Gp {
                    length_scale: self.length_scale.unwrap_or(current),
                }
            }
            PriorName::Gmm => {
                let (mean, std) = match &cfg.prior {
                    PriorConfig::Gmm { components } if components.len() == 1 => {
                        (components[0].mean, components[0].std)
                    }
                    PriorConfig::Gmm { .. } if self.gmm_mean.is_some() || self.gmm_std.is_some() => {
                        return Err(ConfigError(
                            "prior.components: --gmm-mean/--gmm-std only override single-component priors"
                                .into(),
                        )
                        .into());
                    }
                    PriorConfig::Gmm { .. } => return Ok(()),
                    _ => (1.0, 0.5),
                };
                PriorConfig::Gmm {
                    components: vec![GmmComponent {
                        weight: 1.0,
                        mean: self.gmm_mean.unwrap_or(mean),
                        std: self.gmm_std.unwrap_or(std),
                    }],
                }
            }
            PriorName::Zero => PriorConfig::Zero,
            PriorName::Constant => PriorConfig::Constant {
                value: self.constant.unwrap_or(0.0),
            },
        };
        Ok(())
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<tilefuse::Error>() {
            return match e {
                tilefuse::Error::Numerical(_) => 3,
                _ => 2,
            };
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Sample(o) => commands::sample(&o.resolve()?, "sample"),
        Command::Panorama(o) => commands::sample(&o.resolve_with(true)?, "panorama"),
        Command::VarianceTest(o) => commands::variance_test(&o.resolve()?),
        Command::SeamTest(o) => commands::seam_test(&o.resolve()?),
        Command::StyleSweep {
            overrides,
            alphas,
            sample,
        } => {
            let alphas = alphas.unwrap_or_else(tilefuse::experiments::default_alpha_grid);
            commands::style_sweep_cmd(&overrides.resolve()?, &alphas, sample)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
