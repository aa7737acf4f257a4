use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use afford_core::experiments::{
    run_experiment, write_run, ConfigFile, ExperimentConfig, ExperimentKind,
};
use anyhow::{Context, Result};
use clap::Parser;

/// Run an affordance planning or learning experiment and write its results.
///
/// Writes `results.csv`, `manifest.json` and any checkpoints under `--out`.
/// Passing a run's `manifest.json` as `--config` repeats that run.
#[derive(Debug, Parser)]
#[command(name = "afford-plan", version)]
struct Args {
    /// intent-planning, timing, ce-planning-loss or learning.
    experiment: ExperimentKind,

    /// JSON config; fields left out take the experiment's defaults.
    #[arg(long)]
    config: PathBuf,

    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,

    /// Comma-separated seeds, replacing the config's.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,

    /// Affordance thresholds.
    #[arg(long, value_delimiter = ',')]
    kappa: Option<Vec<f64>>,

    /// Success probabilities for the gridworlds.
    #[arg(long, value_delimiter = ',')]
    p: Option<Vec<f64>>,

    /// Trajectory counts for the certainty-equivalence experiment.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
}

fn load_config(args: &Args) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let file = ConfigFile::from_json(&text)
        .with_context(|| format!("parsing {}", args.config.display()))?;
    let config = ExperimentConfig::resolve(args.experiment, file)?.with_overrides(
        args.seeds.clone(),
        args.kappa.clone(),
        args.p.clone(),
        args.n.clone(),
    )?;
    Ok(config)
}

fn run(args: &Args) -> Result<bool> {
    let config = load_config(args)?;
    let start = Instant::now();
    let output = run_experiment(&config)?;
    let manifest = write_run(&args.out, &config, &output)
        .with_context(|| format!("writing results to {}", args.out.display()))?;
    for f in &manifest.failures {
        eprintln!(
            "failed cell (seed {}, {}): {}",
            f.coord.seed, f.scope, f.message
        );
    }
    println!(
        "{}: {} rows, {} artifacts, {} failed cells in {:.1}s -> {}",
        manifest.experiment,
        manifest.rows,
        manifest.artifacts.len(),
        manifest.failures.len(),
        start.elapsed().as_secs_f64(),
        args.out.display()
    );
    Ok(manifest.succeeded)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
