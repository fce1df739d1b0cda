//! Command-line verbs: `generate`, `compare`, `slices` and `validate-config`.
//!
//! Each command returns a process exit code: 0 on success, 1 for runtime
//! failures and 2 for configuration or usage errors.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::conditioning::Trajectory;
use crate::config::{ConfigError, Experiment, RunConfig, SeedSpec};
use crate::error::{Error, Result};
use crate::metrics::{spacetime_slice, world_consistency, ConsistencyReport};
use crate::numerics::{psnr, ImageGrid, UNIT_RANGE_PEAK};
use crate::pnm::{extension, read_pnm, write_pnm};
use crate::samplers::{GenerationTrace, Variant};

pub const EXIT_OK: u8 = 0;
pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

/// Seed sweeps smaller than this are flagged in comparison tables.
pub const SMALL_SAMPLE_SEEDS: usize = 10;

#[derive(Debug, Parser)]
#[command(name = "viewfusion", version, about = "Multi-view diffusion sampling on an analytic toy world")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate views along the configured trajectory.
    Generate(RunArgs),
    /// Run several sampler variants on identical seeds and tabulate consistency.
    Compare(RunArgs),
    /// Stack one scanline of every frame in a directory into a space-time slice.
    Slices(SliceArgs),
    /// Check a config and print its effective form.
    ValidateConfig {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Run this single seed instead of the configured ones.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for seed sweeps (default: all cores).
    #[arg(long, value_name = "K")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SliceArgs {
    /// Directory holding frame_*.pgm or frame_*.ppm files.
    #[arg(long, value_name = "DIR")]
    pub frames: PathBuf,
    /// Row to extract (default: middle row).
    #[arg(long, value_name = "ROW")]
    pub scanline: Option<usize>,
    /// Output directory (default: the frames directory).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn exit_code(result: std::result::Result<(), Failure>) -> u8 {
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(msg)) => {
            eprintln!("{msg}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

pub fn run(cli: Cli) -> u8 {
    match cli.command {
        Command::Generate(args) => cmd_generate(&args),
        Command::Compare(args) => cmd_compare(&args),
        Command::Slices(args) => cmd_slices(&args),
        Command::ValidateConfig { config } => validate_config(&config),
    }
}

/// Loads the config and applies `--seed` and `--out`.
fn prepare(args: &RunArgs) -> std::result::Result<(RunConfig, Experiment), Failure> {
    let (mut config, experiment) = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seeds = SeedSpec::single(seed);
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    Ok((config, experiment))
}

fn pool(jobs: Option<usize>) -> std::result::Result<rayon::ThreadPool, Failure> {
    if jobs == Some(0) {
        return Err(Failure::Config("`--jobs` must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Runtime(Error::Config(e.to_string())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Adjacent-frame consistency of a trace; `None` when it has fewer than two frames.
pub fn trace_consistency(experiment: &Experiment, trace: &GenerationTrace) -> Result<Option<ConsistencyReport>> {
    let frames = trace.playback();
    if frames.len() < 2 {
        return Ok(None);
    }
    let cyclic = trace.trajectory.mode == crate::conditioning::TrajectoryMode::Spin;
    world_consistency(&experiment.world, &frames, cyclic).map(Some)
}

#[derive(Serialize)]
struct Timing<'a> {
    seed: u64,
    stage_seconds: &'a [f64],
    total_seconds: f64,
}

fn write_run(dir: &Path, experiment: &Experiment, trace: &GenerationTrace) -> Result<()> {
    fs::create_dir_all(dir)?;
    let ext = extension(experiment.world.grid_dims())?;
    for stage in &trace.stages {
        write_pnm(&dir.join(format!("frame_{:03}.{ext}", stage.index)), &stage.frame)?;
    }
    write_json(&dir.join("trace.json"), trace)?;
    if let Some(report) = trace_consistency(experiment, trace)? {
        write_json(&dir.join("consistency.json"), &report)?;
    }
    write_json(
        &dir.join("timing.json"),
        &Timing {
            seed: trace.seed,
            stage_seconds: &trace.stage_seconds,
            total_seconds: trace.stage_seconds.iter().sum(),
        },
    )
}

fn seed_dir(root: &Path, seed: u64, sweep: bool) -> PathBuf {
    if sweep {
        root.join(format!("seed_{seed:04}"))
    } else {
        root.to_path_buf()
    }
}

pub fn cmd_generate(args: &RunArgs) -> u8 {
    exit_code(generate(args))
}

fn generate(args: &RunArgs) -> std::result::Result<(), Failure> {
    let (config, experiment) = prepare(args)?;
    let seeds = config.seeds.seeds();
    let root = config.output_dir.clone();
    fs::create_dir_all(&root)?;
    fs::write(root.join("config.json"), config.to_json())?;
    if experiment.trajectory.degenerate {
        log::warn!("target equals the condition pose; no views to generate");
    }
    let sweep = seeds.len() > 1;
    pool(args.jobs)?.install(|| {
        seeds.par_iter().try_for_each(|&seed| {
            let trace = experiment
                .sampler
                .run_variant(&experiment.world, &experiment.given, &experiment.trajectory, seed)?;
            log::info!("seed {seed}: {} frames", trace.stages.len());
            write_run(&seed_dir(&root, seed, sweep), &experiment, &trace)
        })
    })?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub runs: usize,
    pub mode_agreement: f64,
    pub mode_agreement_se: f64,
    pub mean_ssim: f64,
    pub mean_ssim_se: f64,
    pub mean_psnr: f64,
    pub mean_l1: f64,
    /// PSNR of the last frame against the ground-truth rendering, when the
    /// conditions pin down a single mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terminal_psnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub small_sample_warning: bool,
    pub rows: Vec<VariantSummary>,
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs every variant on every seed and summarizes adjacent-frame consistency.
pub fn compare_variants(experiment: &Experiment, variants: &[Variant], seeds: &[u64]) -> Result<Comparison> {
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let sampler = crate::samplers::Sampler::with_sub_schedule(
            experiment.sampler.schedule().clone(),
            experiment.sampler.sub_schedule().clone(),
            experiment.sampler.config().with_variant(variant),
        )?;
        let results = seeds
            .par_iter()
            .map(|&seed| {
                let trace = sampler.run_variant(&experiment.world, &experiment.given, &experiment.trajectory, seed)?;
                let report = trace_consistency(experiment, &trace)?;
                let terminal = match (experiment.truth_mode, trace.stages.last()) {
                    (Some(mode), Some(last)) => {
                        let pose = trace.reference.apply(&last.target);
                        Some(psnr(&last.frame, &experiment.world.render(mode, &pose)?, UNIT_RANGE_PEAK)?)
                    }
                    _ => None,
                };
                Ok((report, terminal))
            })
            .collect::<Result<Vec<_>>>()?;
        let reports: Vec<&ConsistencyReport> = results.iter().filter_map(|(r, _)| r.as_ref()).collect();
        if reports.is_empty() {
            return Err(Error::Config(
                "comparison needs trajectories with at least two generated frames".into(),
            ));
        }
        let col = |f: fn(&ConsistencyReport) -> f64| reports.iter().map(|r| f(r)).collect::<Vec<_>>();
        let (agree, agree_se) = mean_and_se(&col(|r| r.mode_agreement.unwrap_or(f64::NAN)));
        let (ssim, ssim_se) = mean_and_se(&col(|r| r.mean_ssim));
        let terminals: Vec<f64> = results.iter().filter_map(|(_, t)| *t).collect();
        rows.push(VariantSummary {
            variant,
            runs: reports.len(),
            mode_agreement: agree,
            mode_agreement_se: agree_se,
            mean_ssim: ssim,
            mean_ssim_se: ssim_se,
            mean_psnr: mean_and_se(&col(|r| r.mean_psnr)).0,
            mean_l1: mean_and_se(&col(|r| r.mean_l1)).0,
            terminal_psnr: (!terminals.is_empty()).then(|| mean_and_se(&terminals).0),
        });
    }
    Ok(Comparison {
        seeds: seeds.to_vec(),
        small_sample_warning: seeds.len() < SMALL_SAMPLE_SEEDS,
        rows,
    })
}

impl Comparison {
    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<26} {:>5} {:>10} {:>8} {:>9} {:>9} {:>8} {:>10}\n",
            "variant", "runs", "agreement", "+/-", "ssim", "+/-", "psnr", "final_psnr"
        );
        for r in &self.rows {
            let terminal = r.terminal_psnr.map_or("-".to_string(), |t| format!("{t:.2}"));
            out.push_str(&format!(
                "{:<26} {:>5} {:>10.4} {:>8.4} {:>9.4} {:>9.4} {:>8.2} {:>10}\n",
                r.variant.name(),
                r.runs,
                r.mode_agreement,
                r.mode_agreement_se,
                r.mean_ssim,
                r.mean_ssim_se,
                r.mean_psnr,
                terminal
            ));
        }
        if self.small_sample_warning {
            out.push_str(&format!(
                "warning: only {} seed(s); differences are not statistically meaningful\n",
                self.seeds.len()
            ));
        }
        out
    }
}

pub fn cmd_compare(args: &RunArgs) -> u8 {
    exit_code(compare(args))
}

fn compare(args: &RunArgs) -> std::result::Result<(), Failure> {
    let (config, experiment) = prepare(args)?;
    if config.variants.len() < 2 {
        return Err(Failure::Config(format!(
            "config error: `variants`: compare needs at least 2 variants, got {}",
            config.variants.len()
        )));
    }
    let seeds = config.seeds.seeds();
    let root = config.output_dir.clone();
    let comparison = pool(args.jobs)?.install(|| compare_variants(&experiment, &config.variants, &seeds))?;
    fs::create_dir_all(&root)?;
    fs::write(root.join("config.json"), config.to_json())?;
    write_json(&root.join("comparison.json"), &comparison)?;
    let table = comparison.to_table();
    fs::write(root.join("comparison.txt"), &table)?;
    print!("{table}");
    Ok(())
}

/// Sorted `frame_*` PGM/PPM files in `dir`.
pub fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("frame_") && (name.ends_with(".pgm") || name.ends_with(".ppm"))
        })
        .collect();
    files.sort();
    Ok(files)
}

#[derive(serde::Deserialize)]
struct TraceTrajectory {
    trajectory: Trajectory,
}

/// Reorders stage-indexed frames into playback order when the directory
/// holds a matching `trace.json`; otherwise keeps file-name order.
fn playback_sorted(dir: &Path, files: Vec<PathBuf>) -> Vec<PathBuf> {
    let trace = fs::read_to_string(dir.join("trace.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<TraceTrajectory>(&t).ok());
    match trace {
        Some(t) if t.trajectory.len() == files.len() => {
            t.trajectory.playback_order().into_iter().map(|i| files[i].clone()).collect()
        }
        _ => files,
    }
}

pub fn cmd_slices(args: &SliceArgs) -> u8 {
    exit_code(slices(args))
}

fn slices(args: &SliceArgs) -> std::result::Result<(), Failure> {
    let files = frame_files(&args.frames)
        .map_err(|e| Failure::Config(format!("cannot list {}: {e}", args.frames.display())))?;
    if files.is_empty() {
        return Err(Failure::Config(format!("no frame_* images in {}", args.frames.display())));
    }
    let files = playback_sorted(&args.frames, files);
    let frames = files.iter().map(|f| read_pnm(f)).collect::<Result<Vec<ImageGrid>>>()?;
    let dims = frames[0].dims();
    let scanline = args.scanline.unwrap_or(dims.height / 2);
    if scanline >= dims.height {
        return Err(Failure::Config(format!(
            "`--scanline` must be below the frame height {}, got {scanline}",
            dims.height
        )));
    }
    let refs: Vec<&ImageGrid> = frames.iter().collect();
    let slice = spacetime_slice(&refs, scanline)?;
    let out = args.out.clone().unwrap_or_else(|| args.frames.clone());
    fs::create_dir_all(&out)?;
    let path = out.join(format!("slice_row{scanline:03}.{}", extension(dims)?));
    write_pnm(&path, &slice)?;
    println!("{}", path.display());
    Ok(())
}

pub fn validate_config(path: &Path) -> u8 {
    exit_code(RunConfig::load(path).map_err(Failure::from).map(|(config, _)| {
        print!("{}", config.to_json());
    }))
}
