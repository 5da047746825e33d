use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use sand_core::bundle::{compare_csv, estimate_scenes, evaluate_report, synthesize, EstimationReport};
use sand_core::evaluation::default_thresholds;
use sand_core::{EstimatorConfig, MeshCatalog, Method, SceneSpec};

#[derive(Parser)]
#[command(name = "sand", version, about = "Depth-based 6D pose estimation on synthetic tabletop scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scene bundles (depth, intrinsics, detections, ground truth).
    Synth {
        /// Scene spec (JSON); built-in defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Number of scenes.
        #[arg(long)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the pose of every detected class in one scene or a directory of scenes.
    Estimate {
        #[arg(long)]
        method: Method,
        #[arg(long)]
        scene: PathBuf,
        /// Estimator config (JSON with optional `sand` and `icp` sections).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a report against ground truth and write the accuracy curve.
    Eval {
        #[arg(long)]
        report: PathBuf,
        /// Scene directory or directory of scenes; defaults to the scenes named in the report.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Comma-separated thresholds in meters.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate the accuracy curves of several reports side by side.
    Compare {
        #[arg(long, value_delimiter = ',', required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn thresholds(given: Option<Vec<f64>>) -> Result<Vec<f64>> {
    let t = given.unwrap_or_else(default_thresholds);
    if t.is_empty() || t.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        bail!("thresholds must be positive numbers");
    }
    Ok(t)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, seeds, first_seed, out } => {
            let (spec, catalog) = match spec {
                Some(path) => {
                    let s = SceneSpec::load(&path).with_context(|| format!("loading {}", path.display()))?;
                    let base = path.parent().unwrap_or(Path::new("."));
                    let c = MeshCatalog::from_spec(&s, base)?;
                    (s, c)
                }
                None => (SceneSpec::default(), MeshCatalog::builtin()),
            };
            let seeds: Vec<u64> = (first_seed..first_seed + seeds).collect();
            let dirs = synthesize(&spec, &catalog, &seeds, &out)?;
            println!("wrote {} scenes to {}", dirs.len(), out.display());
        }
        Command::Estimate { method, scene, config, out } => {
            let cfg = match config {
                Some(path) => EstimatorConfig::load(&path).with_context(|| format!("loading {}", path.display()))?,
                None => EstimatorConfig::default(),
            };
            let report = estimate_scenes(method, &scene, &cfg)?;
            report.save(&out)?;
            let done: usize = report.scenes.iter().map(|s| s.estimates.len()).sum();
            let failed: usize = report.scenes.iter().map(|s| s.failures.len()).sum();
            println!("{}: {done} estimates, {failed} failures in {} scenes", method.name(), report.scenes.len());
        }
        Command::Eval { report, truth, thresholds: t, out } => {
            let r = EstimationReport::load(&report).with_context(|| format!("loading {}", report.display()))?;
            let eval = evaluate_report(&r, truth.as_deref(), &thresholds(t)?)?;
            write(&out, &eval.curve.to_csv())?;
            print!("{}", eval.summary());
        }
        Command::Compare { reports, truth, thresholds: t, out } => {
            let t = thresholds(t)?;
            let mut evals = Vec::with_capacity(reports.len());
            for path in &reports {
                let r = EstimationReport::load(path).with_context(|| format!("loading {}", path.display()))?;
                let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                evals.push((name, evaluate_report(&r, truth.as_deref(), &t)?));
            }
            let table = compare_csv(&evals);
            write(&out, &table)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
