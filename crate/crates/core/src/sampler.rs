//! Step rules and the joint tiled denoising loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::fusion::{CellAccumulator, FusionConfig, FusionStrategy};
use crate::grid::{gaussian_grid, Grid};
use crate::rng::{Purpose, RngStream};
use crate::schedule::{NoiseSchedule, SigmaVariant};
use crate::style::{apply_style_alignment, StyleAlignConfig};
use crate::tiling::{GuidanceMap, TileLayout};

/// Result of one reverse step: the drawn sample and the mean it was drawn
/// around. Deterministic rules set `mean == x_prev`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub x_prev: Grid,
    pub mean: Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Ancestral sampling over every timestep.
    Ddpm(SigmaVariant),
    /// Deterministic (eta = 0) sampling over a uniform subsequence.
    Ddim { steps: usize },
}

/// Default number of DDIM steps.
pub const DEFAULT_DDIM_STEPS: usize = 50;

impl SamplerKind {
    pub fn is_stochastic(&self) -> bool {
        matches!(self, SamplerKind::Ddpm(_))
    }

    /// `(t, t_next)` pairs from `T` down to `0`.
    pub fn timesteps(&self, schedule: &NoiseSchedule) -> Result<Vec<(usize, usize)>> {
        let total = schedule.steps();
        match *self {
            SamplerKind::Ddpm(_) => Ok((1..=total).rev().map(|t| (t, t - 1)).collect()),
            SamplerKind::Ddim { steps } => {
                if steps == 0 || steps > total {
                    return Err(Error::arg(format!(
                        "DDIM steps must lie in 1..={total}, got {steps}"
                    )));
                }
                let taus: Vec<usize> = (0..=steps).map(|i| i * total / steps).collect();
                Ok((1..=steps).rev().map(|i| (taus[i], taus[i - 1])).collect())
            }
        }
    }
}

/// `mu = (x_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t)` and
/// `x_prev = mu + sigma_t * z`.
pub fn ddpm_step(
    x_t: &Grid,
    eps_hat: &Grid,
    t: usize,
    schedule: &NoiseSchedule,
    variant: SigmaVariant,
    z: &Grid,
) -> Result<StepOutput> {
    schedule.check_t(t)?;
    x_t.ensure_same_shape(eps_hat)?;
    x_t.ensure_same_shape(z)?;
    let coef = schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    let sigma = schedule.sigma_sq(t, variant).sqrt();
    let mean = x_t.zip_map(eps_hat, |x, e| inv_sqrt_alpha * (x - coef * e))?;
    let x_prev = mean.zip_map(z, |m, n| m + sigma * n)?;
    Ok(StepOutput { x_prev, mean })
}

/// Deterministic update between cumulative signal levels `ab_t` and `ab_next`.
pub fn ddim_update(x_t: &Grid, eps_hat: &Grid, ab_t: f64, ab_next: f64) -> Result<Grid> {
    let (sa_t, sn_t) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
    let (sa_n, sn_n) = (ab_next.sqrt(), (1.0 - ab_next).sqrt());
    x_t.zip_map(eps_hat, |x, e| {
        let x0 = (x - sn_t * e) / sa_t;
        sa_n * x0 + sn_n * e
    })
}

pub fn ddim_step(
    x_t: &Grid,
    eps_hat: &Grid,
    t: usize,
    t_next: usize,
    schedule: &NoiseSchedule,
) -> Result<StepOutput> {
    schedule.check_t(t)?;
    if t_next >= t {
        return Err(Error::arg(format!(
            "DDIM must move backwards in time, got {t} -> {t_next}"
        )));
    }
    let x_prev = ddim_update(x_t, eps_hat, schedule.alpha_bar(t), schedule.alpha_bar(t_next))?;
    Ok(StepOutput {
        mean: x_prev.clone(),
        x_prev,
    })
}

fn step_noise(shape: (usize, usize), stream: RngStream, t: usize) -> Result<Grid> {
    if t == 1 {
        // The last ancestral step returns the mean.
        Ok(Grid::zeros(shape.0, shape.1))
    } else {
        gaussian_grid(shape.0, shape.1, stream)
    }
}

fn apply_step(
    denoiser: &dyn Denoiser,
    kind: SamplerKind,
    schedule: &NoiseSchedule,
    x_t: &Grid,
    (t, t_next): (usize, usize),
    z: impl FnOnce() -> Result<Grid>,
) -> Result<StepOutput> {
    let eps = denoiser.predict_eps(x_t, t, schedule)?;
    match kind {
        SamplerKind::Ddpm(variant) => ddpm_step(x_t, &eps, t, schedule, variant, &z()?),
        SamplerKind::Ddim { .. } => ddim_step(x_t, &eps, t, t_next, schedule),
    }
}

/// Runs the reverse chain from a given `x_T`, drawing step noise from the
/// streams of `patch`.
pub fn sample_chain(
    denoiser: &dyn Denoiser,
    kind: SamplerKind,
    schedule: &NoiseSchedule,
    x_start: Grid,
    seed: u64,
    patch: usize,
) -> Result<Grid> {
    let shape = x_start.shape();
    let mut x = x_start;
    for (t, t_next) in kind.timesteps(schedule)? {
        let stream = RngStream::new(seed, Purpose::StepNoise, patch, t);
        x = apply_step(denoiser, kind, schedule, &x, (t, t_next), || {
            step_noise(shape, stream, t)
        })?
        .x_prev;
    }
    Ok(x)
}

/// Single-patch generation: `x_T ~ N(0, I)` then the full reverse chain.
pub fn sample_single(
    denoiser: &dyn Denoiser,
    kind: SamplerKind,
    schedule: &NoiseSchedule,
    shape: (usize, usize),
    seed: u64,
) -> Result<Grid> {
    let x_start = gaussian_grid(shape.0, shape.1, initial_noise_stream(seed))?;
    sample_chain(denoiser, kind, schedule, x_start, seed, 0)
}

pub fn initial_noise_stream(seed: u64) -> RngStream {
    RngStream::new(seed, Purpose::InitNoise, 0, 0)
}

/// Where each patch's stochastic term comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSharing {
    /// Each patch draws its own `z` keyed by `(patch, t)`.
    #[default]
    Independent,
    /// One canvas-wide `z` per step, cropped per patch.
    Shared,
    /// `z = 0` everywhere (isolates the mean path).
    Zero,
}

/// Canvas summary after one fused step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStat {
    pub t: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointOutput {
    pub canvas: Grid,
    pub steps: Vec<StepStat>,
}

/// Joint denoising of overlapping patches over one canvas.
#[derive(Clone, Copy)]
pub struct JointSampler<'a> {
    pub denoiser: &'a dyn Denoiser,
    pub schedule: &'a NoiseSchedule,
    pub kind: SamplerKind,
    pub layout: &'a TileLayout,
    pub guidance: &'a GuidanceMap,
    pub fusion: FusionConfig,
    pub style: Option<&'a StyleAlignConfig>,
    pub noise: NoiseSharing,
}

impl<'a> JointSampler<'a> {
    pub fn new(
        denoiser: &'a dyn Denoiser,
        schedule: &'a NoiseSchedule,
        kind: SamplerKind,
        layout: &'a TileLayout,
        guidance: &'a GuidanceMap,
        fusion: FusionConfig,
    ) -> Self {
        Self {
            denoiser,
            schedule,
            kind,
            layout,
            guidance,
            fusion,
            style: None,
            noise: NoiseSharing::Independent,
        }
    }

    pub fn with_style(mut self, style: Option<&'a StyleAlignConfig>) -> Self {
        self.style = style;
        self
    }

    pub fn with_noise(mut self, noise: NoiseSharing) -> Self {
        self.noise = noise;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let window = self.layout.window();
        if self.guidance.shape() != window {
            return Err(Error::config(format!(
                "guidance map {:?} does not match window {window:?}",
                self.guidance.shape()
            )));
        }
        if let Some(shape) = self.denoiser.input_shape() {
            if shape != window {
                return Err(Error::config(format!(
                    "denoiser expects {shape:?} patches but the window is {window:?}"
                )));
            }
        }
        if let Some(style) = self.style {
            if style.window() != window {
                return Err(Error::config(format!(
                    "style alignment window {:?} does not match layout window {window:?}",
                    style.window()
                )));
            }
        }
        self.kind.timesteps(self.schedule)?;
        Ok(())
    }

    /// `X_T`: standard normal canvas, style-aligned when configured.
    pub fn initial_canvas(&self, seed: u64) -> Result<Grid> {
        let (h, w) = self.layout.canvas();
        let noise = gaussian_grid(h, w, initial_noise_stream(seed))?;
        match self.style {
            Some(cfg) => apply_style_alignment(&noise, cfg),
            None => Ok(noise),
        }
    }

    /// Denoises every patch of `canvas` from `t` to `t_next`, then fuses.
    /// Returns the fused canvas and the per-patch step outputs.
    pub fn step(
        &self,
        canvas: &Grid,
        (t, t_next): (usize, usize),
        seed: u64,
    ) -> Result<(Grid, Vec<StepOutput>)> {
        let window = self.layout.window();
        let shared = match (self.noise, self.kind.is_stochastic()) {
            (NoiseSharing::Shared, true) => {
                let (h, w) = canvas.shape();
                let stream = RngStream::new(seed, Purpose::StepNoise, usize::MAX, t);
                Some(step_noise((h, w), stream, t)?)
            }
            _ => None,
        };
        let outputs: Vec<StepOutput> = self
            .layout
            .patches()
            .par_iter()
            .enumerate()
            .map(|(i, region)| {
                let x = canvas.crop(region)?;
                apply_step(self.denoiser, self.kind, self.schedule, &x, (t, t_next), || {
                    match (&shared, self.noise) {
                        (Some(z), _) => z.crop(region),
                        (None, NoiseSharing::Zero) => Ok(Grid::zeros(window.0, window.1)),
                        _ => step_noise(window, RngStream::new(seed, Purpose::StepNoise, i, t), t),
                    }
                })
            })
            .collect::<Result<_>>()?;
        let fused = self.fuse(canvas.shape(), &outputs)?;
        Ok((fused, outputs))
    }

    fn fuse(&self, shape: (usize, usize), outputs: &[StepOutput]) -> Result<Grid> {
        let (h, w) = shape;
        let mut cells = vec![CellAccumulator::default(); h * w];
        let guided = self.fusion.strategy == FusionStrategy::Guided;
        // Ascending patch index, so every cell sums in the same order.
        for (region, out) in self.layout.patches().iter().zip(outputs) {
            for pr in 0..region.height {
                let row = (region.row0 + pr) * w + region.col0;
                let xs = out.x_prev.row(pr);
                let mus = out.mean.row(pr);
                let ws = self.guidance.weights().row(pr);
                for pc in 0..region.width {
                    let weight = if guided { ws[pc] } else { 1.0 };
                    cells[row + pc].push(xs[pc], mus[pc], weight);
                }
            }
        }
        if let Some(i) = cells.iter().position(|c| c.count() == 0) {
            return Err(Error::config(format!(
                "canvas cell ({}, {}) is not covered by any patch",
                i / w,
                i % w
            )));
        }
        let values = cells.iter().map(|c| c.finish(self.fusion)).collect();
        let fused = Grid::from_vec(h, w, values)?;
        if !fused.is_finite() {
            return Err(Error::Numerical("fused canvas contains non-finite values".into()));
        }
        Ok(fused)
    }

    pub fn run(&self, seed: u64) -> Result<JointOutput> {
        self.validate()?;
        let mut canvas = self.initial_canvas(seed)?;
        let plan = self.kind.timesteps(self.schedule)?;
        let mut steps = Vec::with_capacity(plan.len());
        for ts in plan {
            canvas = self.step(&canvas, ts, seed)?.0;
            let mean = canvas.mean();
            let var = canvas.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / canvas.len() as f64;
            steps.push(StepStat {
                t: ts.0,
                mean,
                std: var.sqrt(),
            });
        }
        Ok(JointOutput { canvas, steps })
    }
}

/// Joint tiled generation with independent per-patch noise.
#[allow(clippy::too_many_arguments)]
pub fn sample_joint(
    denoiser: &dyn Denoiser,
    kind: SamplerKind,
    schedule: &NoiseSchedule,
    layout: &TileLayout,
    guidance: &GuidanceMap,
    fusion: FusionConfig,
    style: Option<&StyleAlignConfig>,
    seed: u64,
) -> Result<Grid> {
    JointSampler::new(denoiser, schedule, kind, layout, guidance, fusion)
        .with_style(style)
        .run(seed)
        .map(|out| out.canvas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{GmmPrior, GpPrior, ZeroDenoiser};

    fn sched() -> NoiseSchedule {
        NoiseSchedule::scaled_linear(100).unwrap()
    }

    fn noise(h: usize, w: usize, k: usize) -> Grid {
        gaussian_grid(h, w, RngStream::new(5, Purpose::Custom(9), k, 0)).unwrap()
    }

    #[test]
    fn ddpm_zero_noise_returns_mean() {
        let s = sched();
        let x = noise(3, 3, 0);
        let e = noise(3, 3, 1);
        let out = ddpm_step(&x, &e, 50, &s, SigmaVariant::Beta, &Grid::zeros(3, 3)).unwrap();
        assert_eq!(out.x_prev, out.mean);
    }

    #[test]
    fn ddpm_zero_eps_scales_by_alpha() {
        let s = NoiseSchedule::linear(1, 0.19, 0.19).unwrap();
        let x = noise(2, 2, 2);
        let out = ddpm_step(&x, &Grid::zeros(2, 2), 1, &s, SigmaVariant::Beta, &Grid::zeros(2, 2))
            .unwrap();
        for (m, xv) in out.mean.values().iter().zip(x.values()) {
            assert!((m - xv / 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn ddpm_noise_term_is_exact() {
        let s = sched();
        let (x, e, z) = (noise(4, 4, 3), noise(4, 4, 4), noise(4, 4, 5));
        let out = ddpm_step(&x, &e, 20, &s, SigmaVariant::TildeBeta, &z).unwrap();
        let sigma = s.sigma(20, SigmaVariant::TildeBeta).unwrap();
        for ((xp, m), zv) in out.x_prev.values().iter().zip(out.mean.values()).zip(z.values()) {
            assert_eq!(*xp, m + sigma * zv);
        }
    }

    #[test]
    fn ddpm_step_variance() {
        let s = sched();
        let t = 60;
        let x = Grid::filled(1, 1, 0.4);
        let e = Grid::filled(1, 1, -0.2);
        let trials = 100_000;
        let z = gaussian_grid(1, trials, RngStream::new(8, Purpose::Custom(2), 0, 0)).unwrap();
        let xs = Grid::filled(1, trials, 0.4);
        let es = Grid::filled(1, trials, -0.2);
        let out = ddpm_step(&xs, &es, t, &s, SigmaVariant::Beta, &z).unwrap();
        let single = ddpm_step(&x, &e, t, &s, SigmaVariant::Beta, &Grid::zeros(1, 1)).unwrap();
        let m = out.x_prev.mean();
        let var = out.x_prev.values().iter().map(|v| (v - m).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let s2 = s.sigma(t, SigmaVariant::Beta).unwrap().powi(2);
        assert!((var / s2 - 1.0).abs() < 0.03, "{var} vs {s2}");
        assert!((m - single.mean.get(0, 0)).abs() < 4.0 * s2.sqrt() / (trials as f64).sqrt());
    }

    #[test]
    fn ddpm_step_errors() {
        let s = sched();
        let x = Grid::zeros(2, 2);
        assert!(ddpm_step(&x, &Grid::zeros(2, 3), 5, &s, SigmaVariant::Beta, &x).is_err());
        assert!(ddpm_step(&x, &x, 0, &s, SigmaVariant::Beta, &x).is_err());
        assert!(ddpm_step(&x, &x, 101, &s, SigmaVariant::Beta, &x).is_err());
    }

    #[test]
    fn ddim_zero_eps_rescales() {
        let s = sched();
        let x = noise(3, 2, 6);
        let out = ddim_step(&x, &Grid::zeros(3, 2), 40, 20, &s).unwrap();
        let k = (s.alpha_bar(20) / s.alpha_bar(40)).sqrt();
        for (a, b) in out.x_prev.values().iter().zip(x.values()) {
            assert!((a - k * b).abs() < 1e-12);
        }
        assert_eq!(out.mean, out.x_prev);
    }

    #[test]
    fn ddim_equal_levels_is_identity() {
        let x = noise(3, 3, 7);
        let e = noise(3, 3, 8);
        let out = ddim_update(&x, &e, 0.37, 0.37).unwrap();
        for (a, b) in out.values().iter().zip(x.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ddim_rejects_forward_steps() {
        let s = sched();
        let x = Grid::zeros(1, 1);
        assert!(ddim_step(&x, &x, 10, 10, &s).is_err());
        assert!(ddim_step(&x, &x, 10, 11, &s).is_err());
    }

    #[test]
    fn ddim_timesteps_are_uniform() {
        let s = sched();
        let plan = SamplerKind::Ddim { steps: 50 }.timesteps(&s).unwrap();
        assert_eq!(plan.len(), 50);
        assert_eq!(plan[0], (100, 98));
        assert_eq!(plan[49], (2, 0));
        assert!(SamplerKind::Ddim { steps: 101 }.timesteps(&s).is_err());
        let ddpm = SamplerKind::Ddpm(SigmaVariant::Beta).timesteps(&s).unwrap();
        assert_eq!(ddpm.len(), 100);
        assert_eq!(ddpm[99], (1, 0));
    }

    #[test]
    fn single_sampling_is_deterministic() {
        let s = sched();
        let prior = GmmPrior::single(1.0, 0.5).unwrap();
        let kind = SamplerKind::Ddpm(SigmaVariant::Beta);
        let a = sample_single(&prior, kind, &s, (4, 4), 12).unwrap();
        let b = sample_single(&prior, kind, &s, (4, 4), 12).unwrap();
        let c = sample_single(&prior, kind, &s, (4, 4), 13).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_eps_ddim_chain_is_scaled_start() {
        let s = sched();
        let kind = SamplerKind::Ddim { steps: 50 };
        let out = sample_single(&ZeroDenoiser, kind, &s, (3, 3), 4).unwrap();
        let start = gaussian_grid(3, 3, initial_noise_stream(4)).unwrap();
        let k = (1.0 / s.alpha_bar(100)).sqrt();
        assert!(out.is_finite());
        for (a, b) in out.values().iter().zip(start.values()) {
            assert!((a - k * b).abs() < 1e-9 * k.max(1.0) * b.abs().max(1.0));
        }
    }

    #[test]
    fn single_patch_joint_matches_single_for_every_fusion() {
        let s = sched();
        let prior = GmmPrior::single(0.5, 0.8).unwrap();
        let layout = TileLayout::single((6, 5)).unwrap();
        let guidance = GuidanceMap::new((6, 5), 1e-4).unwrap();
        for kind in [SamplerKind::Ddpm(SigmaVariant::Beta), SamplerKind::Ddim { steps: 25 }] {
            let single = sample_single(&prior, kind, &s, (6, 5), 21).unwrap();
            for fusion in FusionConfig::ALL {
                let joint =
                    sample_joint(&prior, kind, &s, &layout, &guidance, fusion, None, 21).unwrap();
                assert_eq!(joint, single, "{kind:?} {fusion:?}");
            }
        }
    }

    #[test]
    fn disjoint_patches_evolve_independently() {
        let s = sched();
        let gp = GpPrior::squared_exponential(4, 4, 2.0).unwrap();
        let layout = TileLayout::new((4, 12), (4, 4), (4, 4)).unwrap();
        let guidance = GuidanceMap::new((4, 4), 1e-4).unwrap();
        let kind = SamplerKind::Ddpm(SigmaVariant::Beta);
        let seed = 31;
        let joint = sample_joint(&gp, kind, &s, &layout, &guidance, FusionConfig::MULTI_DIFFUSION, None, seed)
            .unwrap();
        let canvas0 = gaussian_grid(4, 12, initial_noise_stream(seed)).unwrap();
        let mut expected = Grid::zeros(4, 12);
        for (i, region) in layout.patches().iter().enumerate() {
            let start = canvas0.crop(region).unwrap();
            let patch = sample_chain(&gp, kind, &s, start, seed, i).unwrap();
            expected.scatter(region, &patch).unwrap();
        }
        assert_eq!(joint, expected);
    }

    #[test]
    fn zero_noise_plain_and_corrected_agree() {
        let s = sched();
        let gp = GpPrior::squared_exponential(4, 4, 2.0).unwrap();
        let layout = TileLayout::new((4, 10), (4, 4), (3, 3)).unwrap();
        let guidance = GuidanceMap::new((4, 4), 1e-4).unwrap();
        let kind = SamplerKind::Ddpm(SigmaVariant::Beta);
        for (plain, corrected) in [
            (FusionConfig::MULTI_DIFFUSION, FusionConfig::VARIANCE_CORRECTED),
            (FusionConfig::GUIDED, FusionConfig::GUIDED_VARIANCE_CORRECTED),
        ] {
            let run = |fusion| {
                JointSampler::new(&gp, &s, kind, &layout, &guidance, fusion)
                    .with_noise(NoiseSharing::Zero)
                    .run(3)
                    .unwrap()
                    .canvas
            };
            let (a, b) = (run(plain), run(corrected));
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn fusion_alters_patch_trajectories() {
        let s = sched();
        let gp = GpPrior::squared_exponential(4, 4, 2.0).unwrap();
        let layout = TileLayout::new((4, 6), (4, 4), (2, 2)).unwrap();
        let guidance = GuidanceMap::new((4, 4), 1e-4).unwrap();
        let kind = SamplerKind::Ddim { steps: 10 };
        let sampler = JointSampler::new(&gp, &s, kind, &layout, &guidance, FusionConfig::MULTI_DIFFUSION);
        let plan = kind.timesteps(&s).unwrap();
        let x_t = sampler.initial_canvas(8).unwrap();
        let (fused1, _) = sampler.step(&x_t, plan[0], 8).unwrap();
        let (_, outputs) = sampler.step(&fused1, plan[1], 8).unwrap();
        // Patch 0 alone, continuing from its own un-fused result.
        let region = layout.patches()[0];
        let own1 = {
            let x = x_t.crop(&region).unwrap();
            let e = gp.predict_eps(&x, plan[0].0, &s).unwrap();
            ddim_step(&x, &e, plan[0].0, plan[0].1, &s).unwrap().x_prev
        };
        let e = gp.predict_eps(&own1, plan[1].0, &s).unwrap();
        let own2 = ddim_step(&own1, &e, plan[1].0, plan[1].1, &s).unwrap().x_prev;
        assert_ne!(outputs[0].x_prev, own2);
        assert_ne!(fused1.crop(&region).unwrap(), own1);
    }

    #[test]
    fn result_independent_of_thread_count() {
        let s = sched();
        let gp = GpPrior::squared_exponential(8, 8, 3.0).unwrap();
        let layout = TileLayout::new((8, 32), (8, 8), (4, 4)).unwrap();
        let guidance = GuidanceMap::new((8, 8), 1e-4).unwrap();
        let kind = SamplerKind::Ddpm(SigmaVariant::Beta);
        let run = || {
            sample_joint(&gp, kind, &s, &layout, &guidance, FusionConfig::GUIDED_VARIANCE_CORRECTED, None, 17)
                .unwrap()
        };
        let reference = run();
        for threads in [1, 3] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            assert_eq!(pool.install(run), reference);
        }
    }

    #[test]
    fn mismatched_guidance_is_a_config_error() {
        let s = sched();
        let layout = TileLayout::new((4, 10), (4, 4), (3, 3)).unwrap();
        let guidance = GuidanceMap::new((5, 5), 1e-4).unwrap();
        let err = sample_joint(
            &ZeroDenoiser,
            SamplerKind::Ddim { steps: 10 },
            &s,
            &layout,
            &guidance,
            FusionConfig::GUIDED,
            None,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
