use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;
use tilefuse::experiments::{
    ensemble_variance, seam_comparison, step_variance, style_sweep, StyleSweepRow,
};
use tilefuse::metrics::MetricReport;
use tilefuse::sampler::initial_noise_stream;
use tilefuse::sampler::StepStat;
use tilefuse::{gaussian_grid, FusionConfig, JointSampler, Region};

use crate::config::{Resolved, RunConfig};
use crate::pgm::{self, GrayMapping};
use crate::ConfigError;

/// Monte-Carlo trial counts below this make the variance estimates too noisy
/// to read at the percent level.
const MIN_TRIALS: usize = 1000;

fn warn(warnings: &mut Vec<String>, msg: impl Into<String>) {
    let msg = msg.into();
    eprintln!("warning: {msg}");
    warnings.push(msg);
}

fn prepare(cfg: &RunConfig) -> Result<Resolved> {
    let resolved = cfg.resolve()?;
    for w in &resolved.warnings {
        eprintln!("warning: {w}");
    }
    fs::create_dir_all(&cfg.output)
        .with_context(|| format!("creating output directory {}", cfg.output.display()))?;
    Ok(resolved)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct SampleRun {
    seed: u64,
    file: String,
    mapping: GrayMapping,
    elapsed_secs: f64,
    steps: Vec<StepStat>,
}

#[derive(Serialize)]
struct SampleManifest<'a> {
    command: &'a str,
    config: &'a RunConfig,
    warnings: &'a [String],
    fusion: &'a str,
    patches: &'a [Region],
    runs: Vec<SampleRun>,
    elapsed_secs: f64,
}

pub fn sample(cfg: &RunConfig, command: &str) -> Result<()> {
    let resolved = prepare(cfg)?;
    let sampler = resolved.sampler();
    let start = Instant::now();
    let mut runs = Vec::new();
    for seed in cfg.seeds() {
        let t0 = Instant::now();
        let out = sampler.run(seed)?;
        let file = format!("seed_{seed}.pgm");
        let mapping = pgm::write(&cfg.output.join(&file), &out.canvas)?;
        runs.push(SampleRun {
            seed,
            file,
            mapping,
            elapsed_secs: t0.elapsed().as_secs_f64(),
            steps: out.steps,
        });
    }
    let manifest = SampleManifest {
        command,
        config: cfg,
        warnings: &resolved.warnings,
        fusion: resolved.fusion.label(),
        patches: resolved.layout.patches(),
        runs,
        elapsed_secs: start.elapsed().as_secs_f64(),
    };
    write_json(&cfg.output.join("manifest.json"), &manifest)?;
    println!(
        "wrote {} image(s) and manifest.json to {}",
        manifest.runs.len(),
        cfg.output.display()
    );
    Ok(())
}

pub fn variance_test(cfg: &RunConfig) -> Result<()> {
    let mut resolved = prepare(cfg)?;
    if cfg.trials < MIN_TRIALS {
        let msg = format!("{} trials is below {MIN_TRIALS}; variance ratios will be noisy", cfg.trials);
        warn(&mut resolved.warnings, msg);
    }
    if !resolved.kind.is_stochastic() {
        warn(
            &mut resolved.warnings,
            "ddim is deterministic; every step variance is zero and ratios are reported as 1",
        );
    }
    let t = cfg.variance_t.unwrap_or((cfg.timesteps / 2).max(1));
    let (h, w) = resolved.layout.canvas();
    let x_t = gaussian_grid(h, w, initial_noise_stream(cfg.seed))?;
    let base = resolved.sampler();
    let mut report = MetricReport::new();
    let mut single = Vec::new();
    let mut chain = Vec::new();
    for fusion in FusionConfig::ALL {
        let s = JointSampler { fusion, ..base };
        let v = step_variance(&s, &x_t, t, cfg.trials, cfg.seed)?;
        let label = fusion.label();
        report.insert(format!("step.{label}.ratio"), v.overlap_ratio())?;
        report.insert(format!("step.{label}.nominal_ratio"), v.nominal_ratio())?;
        single.push(json!({
            "fusion": label,
            "t": t,
            "trials": cfg.trials,
            "sigma_sq": v.sigma_sq,
            "expected_overlap": v.expected_at_overlap(),
            "measured_overlap": v.measured_at_overlap(),
            "ratio": v.overlap_ratio(),
            "nominal_ratio": v.nominal_ratio(),
        }));
        if cfg.chain_runs >= 2 {
            let seeds: Vec<u64> = (0..cfg.chain_runs as u64).map(|k| cfg.seed + k).collect();
            match ensemble_variance(&s, &seeds) {
                Ok(e) => {
                    report.insert(format!("chain.{label}.ratio"), e.ratio)?;
                    chain.push(json!({
                        "fusion": label,
                        "runs": e.runs,
                        "overlap_variance": e.overlap_variance,
                        "single_variance": e.single_variance,
                        "ratio": e.ratio,
                    }));
                }
                Err(tilefuse::Error::Config(msg)) => {
                    warn(&mut resolved.warnings, format!("full-chain experiment skipped: {msg}"));
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    if cfg.chain_runs < 2 {
        warn(&mut resolved.warnings, "full-chain experiment skipped: chain_runs < 2");
    }
    let doc = json!({
        "command": "variance-test",
        "config": cfg,
        "warnings": resolved.warnings,
        "single_step": single,
        "full_chain": chain,
    });
    write_json(&cfg.output.join("variance.json"), &doc)?;
    write_text(&cfg.output.join("variance.csv"), &report.to_csv())?;
    print!("{}", report.to_csv());
    Ok(())
}

pub fn seam_test(cfg: &RunConfig) -> Result<()> {
    let seeds = cfg.seeds();
    if seeds.len() < 2 {
        return Err(ConfigError(format!(
            "num_seeds: seam test needs at least 2 paired seeds, got {}",
            seeds.len()
        ))
        .into());
    }
    let resolved = prepare(cfg)?;
    let mut methods = vec![FusionConfig::MULTI_DIFFUSION, FusionConfig::GUIDED];
    if cfg.vcf {
        methods.extend([FusionConfig::VARIANCE_CORRECTED, FusionConfig::GUIDED_VARIANCE_CORRECTED]);
    }
    let cmp = seam_comparison(&resolved.sampler(), &methods, &seeds)?;
    let mut report = MetricReport::new();
    for (m, fusion) in methods.iter().enumerate() {
        report.insert(format!("seam.{}.mean", fusion.label()), cmp.mean(m))?;
    }
    let gf_vs_md = cmp.paired(0, 1);
    report.insert("paired.gf_vs_md.wins", gf_vs_md.wins as f64)?;
    report.insert("paired.gf_vs_md.p_value", gf_vs_md.p_value)?;
    let mut paired = vec![json!({"baseline": "md", "candidate": "gf", "result": gf_vs_md})];
    if cfg.vcf {
        let p = cmp.paired(2, 3);
        report.insert("paired.vcf+gf_vs_vcf.wins", p.wins as f64)?;
        report.insert("paired.vcf+gf_vs_vcf.p_value", p.p_value)?;
        paired.push(json!({"baseline": "vcf", "candidate": "vcf+gf", "result": p}));
    }
    let per_seed: Vec<_> = seeds
        .iter()
        .enumerate()
        .map(|(k, seed)| {
            let energies: serde_json::Map<String, serde_json::Value> = methods
                .iter()
                .enumerate()
                .map(|(m, f)| (f.label().to_string(), json!(cmp.energies[m][k])))
                .collect();
            json!({"seed": seed, "seam_energy": energies})
        })
        .collect();
    let doc = json!({
        "command": "seam-test",
        "config": cfg,
        "warnings": resolved.warnings,
        "seam_columns": resolved.layout.seam_columns(),
        "paired": paired,
        "per_seed": per_seed,
    });
    write_json(&cfg.output.join("seam.json"), &doc)?;
    write_text(&cfg.output.join("seam.csv"), &report.to_csv())?;
    print!("{}", report.to_csv());
    Ok(())
}

pub fn style_sweep_cmd(cfg: &RunConfig, alphas: &[f64], sample: bool) -> Result<()> {
    let resolved = prepare(cfg)?;
    let sampler = JointSampler {
        style: None,
        ..resolved.sampler()
    };
    let rows: Vec<StyleSweepRow> = style_sweep(&sampler, alphas, &cfg.seeds(), sample)?;
    let mut csv = String::from("alpha,noise_cosine,output_ssim\n");
    for r in &rows {
        let ssim = r.output_ssim.map(|v| v.to_string()).unwrap_or_default();
        csv.push_str(&format!("{},{},{}\n", r.alpha, r.noise_cosine, ssim));
    }
    let doc = json!({
        "command": "style-sweep",
        "config": cfg,
        "warnings": resolved.warnings,
        "rows": rows,
    });
    write_json(&cfg.output.join("style_sweep.json"), &doc)?;
    write_text(&cfg.output.join("style_sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}
