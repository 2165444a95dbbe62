//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line.

use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;
use tilefuse::experiments::{ensemble_variance, seam_comparison, step_variance};
use tilefuse::fusion::{fuse, fuse_guided, fuse_mean, fuse_vcf_uniform, fuse_vcf_weighted, variance_gain};
use tilefuse::metrics::{ks_critical_value, ks_statistic};
use tilefuse::rng::{Purpose, RngStream};
use tilefuse::style::{disjoint_windows, mean_pairwise_cosine};
use tilefuse::{
    apply_style_alignment, gaussian_grid, sample_joint, sample_single, FusionConfig, GmmPrior,
    GpPrior, Grid, GuidanceMap, JointSampler, NoiseSchedule, SamplerKind, SigmaVariant,
    StyleAlignConfig, TileLayout, ZeroDenoiser,
};

const DDPM: SamplerKind = SamplerKind::Ddpm(SigmaVariant::Beta);

/// Runs one criterion at a time so the wall-clock bounds are not inflated by
/// the other checks sharing the machine.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

struct Criterion {
    name: &'static str,
    start: Instant,
    checks: Vec<(String, bool)>,
}

impl Criterion {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            start: Instant::now(),
            checks: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, detail: impl Into<String>) {
        self.checks.push((detail.into(), ok));
    }

    fn runtime_below(&mut self, limit: Duration) {
        let took = self.start.elapsed();
        self.check(took < limit, format!("runtime {:.1}s < {}s", took.as_secs_f64(), limit.as_secs()));
    }

    fn finish(self) {
        let ok = self.checks.iter().all(|c| c.1);
        let details: Vec<String> = self
            .checks
            .iter()
            .map(|(d, pass)| if *pass { d.clone() } else { format!("[failed] {d}") })
            .collect();
        let line = format!(
            "{} {}: {}\n",
            if ok { "PASS" } else { "FAIL" },
            self.name,
            details.join("; ")
        );
        // Written past the test harness capture so the verdict always shows.
        std::io::stdout().write_all(line.as_bytes()).unwrap();
        assert!(ok, "{}", line.trim_end());
    }
}

fn rel_err(measured: f64, expected: f64) -> f64 {
    (measured / expected - 1.0).abs()
}

fn normal_cdf(x: f64, mean: f64, std: f64) -> f64 {
    0.5 * libm::erfc(-(x - mean) / (std * std::f64::consts::SQRT_2))
}

fn desk_layout() -> TileLayout {
    TileLayout::new((64, 448), (64, 64), (48, 48)).unwrap()
}

/// One step on an `n`-patch stacked overlap: canvas `1 x (2n - 1)`, window
/// `1 x n`, stride 1, so the centre cell is covered by all `n` patches.
fn stacked_variance(n: usize, guidance: &GuidanceMap, fusion: FusionConfig, trials: usize) -> f64 {
    let schedule = NoiseSchedule::scaled_linear(100).unwrap();
    let layout = TileLayout::new((1, 2 * n - 1), (1, n), (1, 1)).unwrap();
    let sampler = JointSampler::new(&ZeroDenoiser, &schedule, DDPM, &layout, guidance, fusion);
    let x_t = Grid::from_fn(1, 2 * n - 1, |_, c| 0.1 * c as f64);
    let v = step_variance(&sampler, &x_t, 50, trials, 1_000 * n as u64).unwrap();
    v.measured.get(0, n - 1)
}

#[test]
fn variance_collapse_on_two_patch_overlap() {
    let _guard = serial();
    let mut c = Criterion::new("two-patch variance collapse and correction");
    let schedule = NoiseSchedule::scaled_linear(100).unwrap();
    let t = 50;
    // Beta variant: sigma_t^2 = beta_t.
    let sigma_sq = schedule.betas()[t - 1];
    let uniform = GuidanceMap::uniform((1, 2));
    let plain = stacked_variance(2, &uniform, FusionConfig::MULTI_DIFFUSION, 100_000);
    let corrected = stacked_variance(2, &uniform, FusionConfig::VARIANCE_CORRECTED, 100_000);
    c.check(
        rel_err(plain, sigma_sq / 2.0) < 0.03,
        format!("plain {plain:.4e} vs sigma^2/2 {:.4e} (err {:.2}%)", sigma_sq / 2.0, 100.0 * rel_err(plain, sigma_sq / 2.0)),
    );
    c.check(
        rel_err(corrected, sigma_sq) < 0.03,
        format!("corrected {corrected:.4e} vs sigma^2 {sigma_sq:.4e} (err {:.2}%)", 100.0 * rel_err(corrected, sigma_sq)),
    );
    c.runtime_below(Duration::from_secs(10));
    c.finish();
}

#[test]
fn variance_generalises_to_n_patches_and_weights() {
    let _guard = serial();
    let mut c = Criterion::new("N-patch and weighted variance");
    let schedule = NoiseSchedule::scaled_linear(100).unwrap();
    let sigma_sq = schedule.betas()[49];
    let mut rng = RngStream::new(5, Purpose::Custom(900), 0, 0).rng();
    for n in [3, 4] {
        let uniform = GuidanceMap::uniform((1, n));
        let plain = stacked_variance(n, &uniform, FusionConfig::MULTI_DIFFUSION, 100_000);
        let corrected = stacked_variance(n, &uniform, FusionConfig::VARIANCE_CORRECTED, 100_000);
        let target = sigma_sq / n as f64;
        c.check(rel_err(plain, target) < 0.05, format!("N={n} plain err {:.2}%", 100.0 * rel_err(plain, target)));
        c.check(
            rel_err(corrected, sigma_sq) < 0.05,
            format!("N={n} corrected err {:.2}%", 100.0 * rel_err(corrected, sigma_sq)),
        );

        let ws: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let guidance = GuidanceMap::from_weights(Grid::from_vec(1, n, ws.clone()).unwrap()).unwrap();
        let total: f64 = ws.iter().sum();
        let squares: f64 = ws.iter().map(|w| w * w).sum();
        let closed_form = squares / (total * total);
        // Independent of the library's coefficient code.
        c.check(
            (variance_gain(FusionConfig::GUIDED, &ws) - closed_form).abs() < 1e-14,
            format!("N={n} weighted gain {closed_form:.4} matches coefficient identity"),
        );
        let plain_w = stacked_variance(n, &guidance, FusionConfig::GUIDED, 100_000);
        let corrected_w = stacked_variance(n, &guidance, FusionConfig::GUIDED_VARIANCE_CORRECTED, 100_000);
        c.check(
            rel_err(plain_w, sigma_sq * closed_form) < 0.05,
            format!("N={n} weighted plain err {:.2}%", 100.0 * rel_err(plain_w, sigma_sq * closed_form)),
        );
        c.check(
            rel_err(corrected_w, sigma_sq) < 0.05,
            format!("N={n} weighted corrected err {:.2}%", 100.0 * rel_err(corrected_w, sigma_sq)),
        );
    }
    c.finish();
}

#[test]
fn reduction_identities_hold_exactly() {
    let _guard = serial();
    let mut c = Criterion::new("reduction identities");
    let mut rng = RngStream::new(6, Purpose::Custom(901), 0, 0).rng();
    let mut guided_eq = true;
    let mut vcf_eq = true;
    let mut identity = true;
    let mut scaled_gap: f64 = 0.0;
    for _ in 0..10_000 {
        let n = rng.random_range(1..9);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let mus: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let ones = vec![1.0; n];
        guided_eq &= fuse_guided(&xs, &ones).unwrap() == fuse_mean(&xs).unwrap();
        vcf_eq &= fuse_vcf_weighted(&xs, &mus, &ones).unwrap() == fuse_vcf_uniform(&xs, &mus).unwrap();
        let c_w = vec![rng.random_range(0.01..5.0); n];
        scaled_gap = scaled_gap.max((fuse_guided(&xs, &c_w).unwrap() - fuse_mean(&xs).unwrap()).abs());
        let ws: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        for cfg in FusionConfig::ALL {
            identity &= fuse(cfg, &xs[..1], &mus[..1], &ws[..1]).unwrap() == xs[0];
        }
    }
    c.check(guided_eq, "weighted mean with unit weights == mean (bitwise)");
    c.check(vcf_eq, "weighted correction with unit weights == uniform correction (bitwise)");
    c.check(identity, "every rule is the identity for one patch");
    c.check(scaled_gap < 1e-13, format!("equal non-unit weights within {scaled_gap:.1e}"));

    // The same reductions through the full engine.
    let schedule = NoiseSchedule::scaled_linear(100).unwrap();
    let gp = GpPrior::squared_exponential(16, 16, 4.0).unwrap();
    let layout = TileLayout::new((16, 40), (16, 16), (12, 12)).unwrap();
    let uniform = GuidanceMap::uniform((16, 16));
    let run = |fusion| sample_joint(&gp, DDPM, &schedule, &layout, &uniform, fusion, None, 3).unwrap();
    c.check(
        run(FusionConfig::GUIDED) == run(FusionConfig::MULTI_DIFFUSION),
        "joint chain: uniform-map guided == mean (bitwise)",
    );
    c.check(
        run(FusionConfig::GUIDED_VARIANCE_CORRECTED) == run(FusionConfig::VARIANCE_CORRECTED),
        "joint chain: uniform-map guided correction == uniform correction (bitwise)",
    );

    let gmm = GmmPrior::single(1.0, 0.5).unwrap();
    let single = TileLayout::single((16, 16)).unwrap();
    let guidance = GuidanceMap::new((16, 16), 1e-4).unwrap();
    let mut same = true;
    for kind in [DDPM, SamplerKind::Ddpm(SigmaVariant::TildeBeta), SamplerKind::Ddim { steps: 20 }] {
        for denoiser in [&gp as &dyn tilefuse::Denoiser, &gmm] {
            let reference = sample_single(denoiser, kind, &schedule, (16, 16), 11).unwrap();
            for fusion in FusionConfig::ALL {
                let joint =
                    sample_joint(denoiser, kind, &schedule, &single, &guidance, fusion, None, 11).unwrap();
                same &= joint == reference;
            }
        }
    }
    c.check(same, "single-patch joint sampling == single sampling (bitwise, 3 samplers x 2 priors x 4 rules)");
    c.finish();
}

#[test]
fn panorama_patch_counts() {
    let _guard = serial();
    let mut c = Criterion::new("layout arithmetic");
    for (stride, expected) in [(384, 9), (128, 25)] {
        let layout = TileLayout::new((512, 3584), (512, 512), (stride, stride)).unwrap();
        let brute = (0..=3584 - 512).filter(|x| x % stride == 0).count();
        c.check(
            layout.len() == expected && brute == expected,
            format!("3584 wide, window 512, stride {stride}: {} patches", layout.len()),
        );
    }
    c.finish();
}

#[test]
fn guided_fusion_reduces_seams() {
    let _guard = serial();
    let mut c = Criterion::new("seam reduction of guided over mean fusion");
    let schedule = NoiseSchedule::scaled_linear(1000).unwrap();
    let gp = GpPrior::squared_exponential(64, 64, 8.0).unwrap();
    let layout = desk_layout();
    let guidance = GuidanceMap::new((64, 64), 1e-4).unwrap();
    let sampler = JointSampler::new(
        &gp,
        &schedule,
        SamplerKind::Ddim { steps: 50 },
        &layout,
        &guidance,
        FusionConfig::MULTI_DIFFUSION,
    );
    let seeds: Vec<u64> = (0..20).collect();
    let cmp = seam_comparison(&sampler, &[FusionConfig::MULTI_DIFFUSION, FusionConfig::GUIDED], &seeds).unwrap();
    let paired = cmp.paired(0, 1);
    c.check(
        paired.candidate_mean < paired.baseline_mean,
        format!("mean seam energy gf {:.4} < md {:.4}", paired.candidate_mean, paired.baseline_mean),
    );
    c.check(
        paired.p_value < 0.05,
        format!("gf lower on {}/{} seeds, sign test p = {:.2e}", paired.wins, paired.trials, paired.p_value),
    );
    c.runtime_below(Duration::from_secs(300));
    c.finish();
}

#[test]
fn exact_denoiser_chains_reproduce_prior() {
    let _guard = serial();
    let mut c = Criterion::new("exact-denoiser chain fidelity");
    let schedule = NoiseSchedule::scaled_linear(100).unwrap();

    let gmm = GmmPrior::single(1.0, 0.5).unwrap();
    let runs = 5000;
    let shape = (8, 8);
    let samples: Vec<Grid> = (0..runs as u64)
        .map(|s| sample_single(&gmm, DDPM, &schedule, shape, s).unwrap())
        .collect();
    let critical = ks_critical_value(runs, 0.01);
    let mut passing = 0;
    let mut worst: f64 = 0.0;
    for p in 0..shape.0 * shape.1 {
        let values: Vec<f64> = samples.iter().map(|g| g.values()[p]).collect();
        let d = ks_statistic(&values, |x| normal_cdf(x, 1.0, 0.5)).unwrap();
        worst = worst.max(d);
        if d < critical {
            passing += 1;
        }
    }
    let frac = passing as f64 / (shape.0 * shape.1) as f64;
    c.check(
        frac >= 0.95,
        format!("GMM: {passing}/64 pixels below KS critical {critical:.4} (worst {worst:.4})"),
    );

    let (h, w, ell) = (16, 16, 4.0);
    let gp = GpPrior::squared_exponential(h, w, ell).unwrap();
    let runs = 2000;
    let dim = h * w;
    let mut data = DMatrix::<f64>::zeros(dim, runs);
    for s in 0..runs {
        let g = sample_single(&gp, DDPM, &schedule, (h, w), 50_000 + s as u64).unwrap();
        data.column_mut(s).copy_from_slice(g.values());
    }
    let mean = data.column_mean();
    for mut col in data.column_iter_mut() {
        col -= &mean;
    }
    let sample_cov = &data * data.transpose() / (runs - 1) as f64;
    // Kernel built directly from pixel coordinates.
    let target = DMatrix::from_fn(dim, dim, |a, b| {
        let (ra, ca) = ((a / w) as f64, (a % w) as f64);
        let (rb, cb) = ((b / w) as f64, (b % w) as f64);
        (-((ra - rb).powi(2) + (ca - cb).powi(2)) / (2.0 * ell * ell)).exp()
    });
    let err = (&sample_cov - &target).norm() / target.norm();
    c.check(err < 0.15, format!("GP 16x16: covariance Frobenius error {:.2}%", 100.0 * err));
    c.runtime_below(Duration::from_secs(600));
    c.finish();
}

#[test]
fn style_alignment_endpoints_and_clustering() {
    let _guard = serial();
    let mut c = Criterion::new("style alignment");
    let schedule = NoiseSchedule::scaled_linear(1000).unwrap();
    let gp = GpPrior::squared_exponential(64, 64, 8.0).unwrap();
    let layout = desk_layout();
    let guidance = GuidanceMap::new((64, 64), 1e-4).unwrap();
    let sampler = JointSampler::new(
        &gp,
        &schedule,
        SamplerKind::Ddim { steps: 10 },
        &layout,
        &guidance,
        FusionConfig::GUIDED,
    );
    let zero = StyleAlignConfig::with_seeded_reference(0.0, (64, 64), 4).unwrap();
    let plain = sampler.run(4).unwrap().canvas;
    let aligned = sampler.with_style(Some(&zero)).run(4).unwrap().canvas;
    c.check(plain == aligned, "alpha = 0 leaves the generated canvas bit-identical");

    let one = StyleAlignConfig::with_seeded_reference(1.0, (64, 64), 4).unwrap();
    let x_t = sampler.with_style(Some(&one)).initial_canvas(4).unwrap();
    let tiled = (0..64).all(|r| (0..448).all(|col| x_t.get(r, col) == one.reference().get(r, col % 64)));
    c.check(tiled, "alpha = 1 initial canvas is the tiled reference");

    let windows = disjoint_windows((64, 448), (64, 64)).unwrap().len();
    let mut increases = 0;
    let trials = 100;
    for k in 0..trials {
        let noise = gaussian_grid(64, 448, RngStream::new(k, Purpose::Custom(902), 0, 0)).unwrap();
        let z_ref = gaussian_grid(64, 64, RngStream::new(k, Purpose::Custom(903), 0, 0)).unwrap();
        let at = |alpha| {
            let cfg = StyleAlignConfig::new(alpha, z_ref.clone()).unwrap();
            mean_pairwise_cosine(&apply_style_alignment(&noise, &cfg).unwrap(), (64, 64)).unwrap()
        };
        if at(0.4) > at(0.0) {
            increases += 1;
        }
    }
    c.check(
        increases == trials,
        format!("mean pairwise cosine over {windows} crops rises from alpha 0 to 0.4 in {increases}/{trials} trials"),
    );
    c.finish();
}

#[test]
fn full_chain_variance_is_restored_in_overlaps() {
    let _guard = serial();
    let mut c = Criterion::new("full-chain overlap variance");
    let schedule = NoiseSchedule::scaled_linear(100).unwrap();
    let gp = GpPrior::squared_exponential(64, 64, 8.0).unwrap();
    let layout = desk_layout();
    let guidance = GuidanceMap::new((64, 64), 1e-4).unwrap();
    let seeds: Vec<u64> = (0..500).collect();
    let ratio = |fusion| {
        let sampler = JointSampler::new(&gp, &schedule, DDPM, &layout, &guidance, fusion);
        ensemble_variance(&sampler, &seeds).unwrap()
    };
    let plain = ratio(FusionConfig::MULTI_DIFFUSION);
    let corrected = ratio(FusionConfig::VARIANCE_CORRECTED);
    c.check(
        plain.ratio < corrected.ratio,
        format!("plain ratio {:.3} < corrected ratio {:.3}", plain.ratio, corrected.ratio),
    );
    c.check(
        rel_err(corrected.ratio, 1.0) < 0.10,
        format!("corrected ratio within 10% of 1 (err {:.1}%)", 100.0 * rel_err(corrected.ratio, 1.0)),
    );
    c.finish();
}
