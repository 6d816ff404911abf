//! Experiment driver. One experiment per invocation; every run is fully
//! determined by (config, seed) and echoes the resolved config into each
//! output file.
//!
//! Exit status: 0 all declared checks passed, 1 a check failed or a
//! computation did not converge, 2 invalid configuration, 3 cell budget
//! exceeded.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

mod experiments;

use experiments::Config;

#[derive(Parser)]
#[command(name = "carpet-lab", version, about = "Pre-carpet diffusion experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and write <out>/<experiment>.{json,csv,gp}.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; explicit flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// One of: build, vd, spectrum, exit-times, ondiag, dg, fk, csa,
    /// cacciopoli, stability, timechange, scom, all.
    #[arg(long)]
    experiment: Option<String>,
    /// Ambient dimension of the carpet (2 or 3 are the studied cases).
    #[arg(long)]
    dim: Option<u32>,
    /// Refinement generation; the graph has (3^dim - 1)^gen cells.
    #[arg(long = "gen")]
    gen: Option<u32>,
    /// Seed for every randomized ingredient of the experiment.
    #[arg(long)]
    seed: Option<u64>,
    /// Time-change exponent (timechange and scom experiments).
    #[arg(long)]
    p: Option<f64>,
    /// Comma-separated radius grid; omitted = experiment default.
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    /// Comma-separated time grid; omitted = experiment default.
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    /// Output directory for the report files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads. The default 1 is the deterministic baseline;
    /// results are identical at any count (randomness is per-task seeded).
    #[arg(long)]
    threads: Option<usize>,
    /// Refuse to build graphs with more cells than this.
    #[arg(long = "budget-cells")]
    budget_cells: Option<u64>,
}

/// TOML mirror of the flag set; unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    experiment: Option<String>,
    dim: Option<u32>,
    gen: Option<u32>,
    seed: Option<u64>,
    p: Option<f64>,
    radii: Option<Vec<f64>>,
    times: Option<Vec<f64>>,
    out: Option<String>,
    threads: Option<usize>,
    budget_cells: Option<u64>,
}

fn resolve(args: RunArgs) -> Result<Config, String> {
    let file = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            toml::from_str::<FileConfig>(&text)
                .map_err(|e| format!("cannot parse {}: {e}", path.display()))?
        }
        None => FileConfig::default(),
    };
    let experiment = args
        .experiment
        .or(file.experiment)
        .ok_or("no experiment named (flag --experiment or config file)")?;
    let out = args
        .out
        .map(|p| p.to_string_lossy().into_owned())
        .or(file.out)
        .unwrap_or_else(|| "out".to_string());
    Ok(Config {
        experiment,
        dim: args.dim.or(file.dim).unwrap_or(2),
        gen: args.gen.or(file.gen).unwrap_or(4),
        seed: args.seed.or(file.seed).unwrap_or(1),
        p: args.p.or(file.p).unwrap_or(1.0),
        radii: args.radii.or(file.radii),
        times: args.times.or(file.times),
        out,
        threads: args.threads.or(file.threads).unwrap_or(1),
        budget_cells: args.budget_cells.or(file.budget_cells).unwrap_or(100_000_000),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Cmd::Run(args) = cli.cmd;
    let cfg = match resolve(args) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("invalid config: {msg}");
            return ExitCode::from(2);
        }
    };
    if cfg.threads == 0 {
        eprintln!("invalid config: --threads must be >= 1");
        return ExitCode::from(2);
    }
    // Results do not depend on the pool size; this only caps parallelism.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    match experiments::dispatch(&cfg) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}: declared checks failed (see report)", cfg.experiment);
            ExitCode::from(1)
        }
        Err(experiments::CliError::Lib(e)) => {
            eprintln!("{}: {e}", cfg.experiment);
            match e {
                carpet_lab::Error::BudgetExceeded { .. } => ExitCode::from(3),
                carpet_lab::Error::InvalidInput(_) | carpet_lab::Error::Unsupported(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::from(1),
            }
        }
        Err(experiments::CliError::Io(e)) => {
            eprintln!("{}: output error: {e}", cfg.experiment);
            ExitCode::from(2)
        }
    }
}
