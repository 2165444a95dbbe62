//! Joint tiled diffusion sampling.
//!
//! A large canvas is generated by running a small denoiser on overlapping
//! windows and reconciling the overlaps after every reverse step. The crate
//! provides the schedules and step rules, exact analytic denoisers to stand in
//! for a trained network, the patch layout, four overlap fusion rules (plain
//! mean, guidance-weighted mean, and their variance-corrected forms), one-shot
//! style alignment of the initial noise, and the metrics used to evaluate
//! the results.

pub mod denoiser;
pub mod error;
pub mod experiments;
pub mod fusion;
pub mod grid;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod style;
pub mod tiling;

pub use denoiser::{ConstantDenoiser, Denoiser, GmmComponent, GmmPrior, GpPrior, ZeroDenoiser};
pub use error::{Error, Result};
pub use fusion::{FusionConfig, FusionStrategy, VarianceMode};
pub use grid::{gaussian_grid, Grid, Region};
pub use rng::{Purpose, RngStream};
pub use sampler::{
    ddim_step, ddpm_step, sample_joint, sample_single, JointSampler, NoiseSharing, SamplerKind,
    StepOutput,
};
pub use schedule::{NoiseSchedule, SigmaVariant};
pub use style::{apply_style_alignment, slerp, StyleAlignConfig};
pub use tiling::{GuidanceMap, TileLayout};
