use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use conflow_cli::commands::{self, Run};
use conflow_cli::config::{ExperimentConfig, ExperimentKind};
use conflow_cli::tensor_file::TensorFileError;

#[derive(Parser)]
#[command(name = "conflow", version, about = "Conformal boundary sampling with nonconformity flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Use the full-scale grid instead of the desk-scale defaults.
    #[arg(long)]
    full_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and write its splits as tensor files.
    Datagen(Common),
    /// Fit the score, compute calibration scores and thresholds.
    Calibrate(Common),
    /// Sample points on the conformal boundary for one test input.
    SampleBoundary(Common),
    /// Sample boundary points, then spread them with tangent repulsion.
    Repulse(Common),
    /// Draw from the conformal predictive distribution.
    SampleCpd(Common),
    /// Reconformalized pointwise bands for the test split.
    Band(Common),
    /// Distributional metrics of CPD samples against the test target.
    Metrics(Common),
    /// Flow convergence grid.
    BenchConvergence(Common),
    /// Repulsion spread and constraint error.
    BenchRepulsion(Common),
    /// Band coverage and width across GP variants.
    BenchBands(Common),
    /// Coverage audit of CPD samples.
    AuditCpd(Common),
}

fn load(c: &Common) -> Result<Run> {
    let cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    Run::new(cfg.resolve(c.seed, c.full_scale)?, &c.out)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("CONFLOW_THREADS") {
        let n: usize = v.parse().with_context(|| format!("CONFLOW_THREADS={v} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<Vec<PathBuf>> {
    init_threads()?;
    match cmd {
        Command::Datagen(c) => commands::datagen(&load(&c)?),
        Command::Calibrate(c) => commands::calibrate_cmd(&load(&c)?),
        Command::SampleBoundary(c) => commands::sample_boundary(&load(&c)?),
        Command::Repulse(c) => commands::repulse_cmd(&load(&c)?),
        Command::SampleCpd(c) => commands::sample_cpd_cmd(&load(&c)?),
        Command::Band(c) => commands::band_cmd(&load(&c)?),
        Command::Metrics(c) => commands::metrics_cmd(&load(&c)?),
        Command::BenchConvergence(c) => commands::run_bench(&load(&c)?, ExperimentKind::Convergence),
        Command::BenchRepulsion(c) => commands::run_bench(&load(&c)?, ExperimentKind::Repulsion),
        Command::BenchBands(c) => commands::run_bench(&load(&c)?, ExperimentKind::Bands),
        Command::AuditCpd(c) => commands::run_bench(&load(&c)?, ExperimentKind::CpdAudit),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.chain().find_map(|c| c.downcast_ref::<TensorFileError>()).map_or(1, |t| t.code() as u8);
            ExitCode::from(code)
        }
    }
}
