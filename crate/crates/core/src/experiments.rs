//! Measurement routines shared by the command-line tool and the test suites.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{variance_gain, FusionConfig, FusionStrategy};
use crate::grid::{gaussian_grid, Grid};
use crate::metrics::{seam_energy, sign_test_p_value, ssim, MomentAccumulator};
use crate::rng::{Purpose, RngStream};
use crate::sampler::{initial_noise_stream, JointSampler, SamplerKind};
use crate::style::{apply_style_alignment, disjoint_windows, mean_pairwise_cosine, StyleAlignConfig};

/// Per-cell variance of one fused step, measured and predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct StepVariance {
    pub t: usize,
    pub sigma_sq: f64,
    pub trials: usize,
    pub measured: Grid,
    /// `sigma_t^2 * sum a_i^2` from the fusion coefficients of each cell.
    pub expected: Grid,
    pub coverage: Grid,
}

impl StepVariance {
    fn mean_over(grid: &Grid, cells: &[(usize, usize)]) -> f64 {
        cells.iter().map(|&(r, c)| grid.get(r, c)).sum::<f64>() / cells.len() as f64
    }

    /// Cells covered by the largest number of patches.
    pub fn maximal_overlap_cells(&self) -> Vec<(usize, usize)> {
        let (_, max) = self.coverage.min_max();
        let (h, w) = self.coverage.shape();
        (0..h)
            .flat_map(|r| (0..w).map(move |c| (r, c)))
            .filter(|&(r, c)| self.coverage.get(r, c) == max)
            .collect()
    }

    pub fn measured_at_overlap(&self) -> f64 {
        Self::mean_over(&self.measured, &self.maximal_overlap_cells())
    }

    pub fn expected_at_overlap(&self) -> f64 {
        Self::mean_over(&self.expected, &self.maximal_overlap_cells())
    }

    /// Measured over expected variance at the maximal-overlap cells; a
    /// deterministic step (expected and measured both 0) counts as 1.
    pub fn overlap_ratio(&self) -> f64 {
        let (m, e) = (self.measured_at_overlap(), self.expected_at_overlap());
        if e == 0.0 && m == 0.0 {
            1.0
        } else {
            m / e
        }
    }

    /// Measured variance at the maximal-overlap cells relative to the
    /// unfused per-patch `sigma_t^2`.
    pub fn nominal_ratio(&self) -> f64 {
        let m = self.measured_at_overlap();
        if self.sigma_sq == 0.0 && m == 0.0 {
            1.0
        } else {
            m / self.sigma_sq
        }
    }
}

/// Repeats one joint step from a fixed canvas `x_t`, each trial with fresh
/// per-patch noise, and collects the per-cell variance of the fused result.
pub fn step_variance(
    sampler: &JointSampler,
    x_t: &Grid,
    t: usize,
    trials: usize,
    seed: u64,
) -> Result<StepVariance> {
    sampler.validate()?;
    if trials < 2 {
        return Err(Error::arg("variance measurement needs at least 2 trials"));
    }
    let t_next = t - 1;
    let mut acc = MomentAccumulator::new(x_t.shape());
    for trial in 0..trials {
        let trial_seed = seed.wrapping_add(trial as u64);
        acc.push(&sampler.step(x_t, (t, t_next), trial_seed)?.0)?;
    }
    let (_, measured) = acc.finish()?;

    let sigma_sq = match sampler.kind {
        SamplerKind::Ddpm(variant) => sampler.schedule.sigma(t, variant)?.powi(2),
        SamplerKind::Ddim { .. } => 0.0,
    };
    let layout = sampler.layout;
    let (h, w) = layout.canvas();
    let mut weights: Vec<Vec<f64>> = vec![Vec::new(); h * w];
    for region in layout.patches() {
        for r in 0..region.height {
            for c in 0..region.width {
                let wgt = match sampler.fusion.strategy {
                    FusionStrategy::Mean => 1.0,
                    FusionStrategy::Guided => sampler.guidance.get(r, c),
                };
                weights[(region.row0 + r) * w + region.col0 + c].push(wgt);
            }
        }
    }
    let expected = Grid::from_vec(
        h,
        w,
        weights
            .iter()
            .map(|ws| sigma_sq * variance_gain(sampler.fusion, ws))
            .collect(),
    )?;
    Ok(StepVariance {
        t,
        sigma_sq,
        trials,
        measured,
        expected,
        coverage: layout.coverage_count(),
    })
}

/// Per-pixel ensemble variance of final canvases over many seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleVariance {
    pub runs: usize,
    pub variance: Grid,
    /// Mean variance over maximal-coverage columns.
    pub overlap_variance: f64,
    /// Mean variance over columns covered by a single patch.
    pub single_variance: f64,
    pub ratio: f64,
}

pub fn ensemble_variance(sampler: &JointSampler, seeds: &[u64]) -> Result<EnsembleVariance> {
    sampler.validate()?;
    let mut acc = MomentAccumulator::new(sampler.layout.canvas());
    // Chunks bound memory; pushing in seed order keeps the sums reproducible.
    for chunk in seeds.chunks(32) {
        let canvases: Vec<Grid> = chunk
            .par_iter()
            .map(|&s| sampler.run(s).map(|o| o.canvas))
            .collect::<Result<_>>()?;
        for c in &canvases {
            acc.push(c)?;
        }
    }
    let (_, variance) = acc.finish()?;
    let (overlap_cols, single_cols) = sampler.layout.overlap_columns();
    if single_cols.is_empty() {
        return Err(Error::config("layout has no single-coverage columns to normalise by"));
    }
    let column_mean = |cols: &[usize]| {
        let h = variance.height();
        cols.iter()
            .map(|&c| (0..h).map(|r| variance.get(r, c)).sum::<f64>())
            .sum::<f64>()
            / (cols.len() * h) as f64
    };
    let overlap_variance = column_mean(&overlap_cols);
    let single_variance = column_mean(&single_cols);
    Ok(EnsembleVariance {
        runs: seeds.len(),
        variance,
        overlap_variance,
        single_variance,
        ratio: overlap_variance / single_variance,
    })
}

/// Seam energies of several fusion rules over the same seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeamComparison {
    pub seeds: Vec<u64>,
    pub methods: Vec<FusionConfig>,
    /// `energies[m][k]` is method `m` on seed `k`.
    pub energies: Vec<Vec<f64>>,
}

/// Paired comparison of a candidate method against a baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedSeams {
    pub baseline_mean: f64,
    pub candidate_mean: f64,
    /// Seeds on which the candidate has strictly lower seam energy.
    pub wins: usize,
    pub ties: usize,
    pub trials: usize,
    /// Two-sided exact sign-test p-value over the non-tied pairs.
    pub p_value: f64,
}

impl SeamComparison {
    pub fn mean(&self, method: usize) -> f64 {
        let e = &self.energies[method];
        e.iter().sum::<f64>() / e.len() as f64
    }

    pub fn paired(&self, baseline: usize, candidate: usize) -> PairedSeams {
        let (a, b) = (&self.energies[baseline], &self.energies[candidate]);
        let wins = a.iter().zip(b).filter(|(x, y)| y < x).count();
        let ties = a.iter().zip(b).filter(|(x, y)| x == y).count();
        PairedSeams {
            baseline_mean: self.mean(baseline),
            candidate_mean: self.mean(candidate),
            wins,
            ties,
            trials: a.len(),
            p_value: sign_test_p_value(wins, a.len() - ties),
        }
    }
}

/// Runs `sampler` once per seed for every fusion method and measures seam
/// energy at the layout's patch edges.
pub fn seam_comparison(
    sampler: &JointSampler,
    methods: &[FusionConfig],
    seeds: &[u64],
) -> Result<SeamComparison> {
    if seeds.len() < 2 {
        return Err(Error::arg(format!(
            "seam comparison needs at least 2 paired seeds, got {}",
            seeds.len()
        )));
    }
    if methods.is_empty() {
        return Err(Error::arg("seam comparison needs at least one fusion method"));
    }
    let boundary = sampler.layout.seam_columns();
    if boundary.is_empty() {
        return Err(Error::config("layout has no interior patch edges"));
    }
    let energies = methods
        .iter()
        .map(|&fusion| {
            let s = JointSampler { fusion, ..*sampler };
            s.validate()?;
            seeds
                .par_iter()
                .map(|&seed| seam_energy(&s.run(seed)?.canvas, &boundary))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(SeamComparison {
        seeds: seeds.to_vec(),
        methods: methods.to_vec(),
        energies,
    })
}

/// One row of a style-alignment sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleSweepRow {
    pub alpha: f64,
    /// Mean pairwise cosine similarity among the aligned initial-noise crops.
    pub noise_cosine: f64,
    /// Mean pairwise SSIM among the crops of the generated canvas, when
    /// sampling was requested.
    pub output_ssim: Option<f64>,
}

/// Mean pairwise SSIM between the disjoint windows of `canvas`.
pub fn mean_pairwise_ssim(canvas: &Grid, window: (usize, usize)) -> Result<f64> {
    let crops: Vec<Grid> = disjoint_windows(canvas.shape(), window)?
        .iter()
        .map(|r| canvas.crop(r))
        .collect::<Result<_>>()?;
    if crops.len() < 2 {
        return Err(Error::arg("pairwise SSIM needs at least two windows"));
    }
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..crops.len() {
        for j in i + 1..crops.len() {
            total += ssim(&crops[i], &crops[j])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Reference noise for a sweep trial.
pub fn style_reference(window: (usize, usize), seed: u64) -> Result<Grid> {
    gaussian_grid(window.0, window.1, RngStream::new(seed, Purpose::StyleRef, 0, 0))
}

/// For each `alpha`, aligns the initial noise of every seed toward that
/// seed's reference and averages the pairwise cosine of the crops. With
/// `sample` set, also generates each canvas and averages the pairwise SSIM of
/// its crops.
pub fn style_sweep(
    sampler: &JointSampler,
    alphas: &[f64],
    seeds: &[u64],
    sample: bool,
) -> Result<Vec<StyleSweepRow>> {
    if seeds.is_empty() {
        return Err(Error::arg("style sweep needs at least one seed"));
    }
    let canvas = sampler.layout.canvas();
    let window = sampler.layout.window();
    disjoint_windows(canvas, window)?;
    alphas
        .iter()
        .map(|&alpha| {
            let per_seed: Vec<(f64, Option<f64>)> = seeds
                .par_iter()
                .map(|&seed| {
                    let cfg = StyleAlignConfig::new(alpha, style_reference(window, seed)?)?;
                    let noise = gaussian_grid(canvas.0, canvas.1, initial_noise_stream(seed))?;
                    let aligned = apply_style_alignment(&noise, &cfg)?;
                    let cos = mean_pairwise_cosine(&aligned, window)?;
                    let out = if sample {
                        let s = sampler.with_style(Some(&cfg));
                        Some(mean_pairwise_ssim(&s.run(seed)?.canvas, window)?)
                    } else {
                        None
                    };
                    Ok((cos, out))
                })
                .collect::<Result<_>>()?;
            let n = per_seed.len() as f64;
            let noise_cosine = per_seed.iter().map(|p| p.0).sum::<f64>() / n;
            let output_ssim = sample.then(|| per_seed.iter().filter_map(|p| p.1).sum::<f64>() / n);
            Ok(StyleSweepRow {
                alpha,
                noise_cosine,
                output_ssim,
            })
        })
        .collect()
}

/// The eleven interpolation ratios 0.0, 0.1, ..., 1.0.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}
