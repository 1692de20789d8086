//! Batch front-end for the perturbation library: term computation, fidelity
//! scans, solver accuracy sweeps, and robustness objectives, driven by JSON
//! configs. Results go to `--out` (or stdout) as JSON or CSV.
//!
//! Logging is controlled by the `PERTURBDYN_LOG` environment variable
//! (standard `env_logger` syntax).

mod commands;
mod config;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use std::fs;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "perturbdyn", version, about = "Perturbative expansion and solver toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for any randomized inputs; recorded in the output.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parallelize the perturbative solver's per-interval work.
    #[arg(long)]
    parallel: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Compute multivariable Dyson or Magnus terms and write the bundle.
    ComputeTerms(CommonArgs),
    /// Scan perturbation axes, comparing Magnus infidelity approximations
    /// against a reference solve.
    FidelityScan(CommonArgs),
    /// Sweep perturbative-solver configurations and report distances to an
    /// adaptive reference.
    SolverSweep(CommonArgs),
    /// Evaluate the moment-weighted robustness objective.
    Robustness(CommonArgs),
}

fn load_config<T: DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn emit(args: &CommonArgs, contents: String) -> Result<()> {
    match &args.out {
        Some(path) => fs::write(path, contents)
            .with_context(|| format!("writing output {}", path.display())),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter("PERTURBDYN_LOG")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::ComputeTerms(args) => {
            let cfg = load_config(&args.config)?;
            emit(args, commands::compute_terms(&cfg, args.seed)?)
        }
        Command::FidelityScan(args) => {
            let cfg = load_config(&args.config)?;
            emit(args, commands::fidelity_scan(&cfg, args.seed)?)
        }
        Command::SolverSweep(args) => {
            let cfg = load_config(&args.config)?;
            emit(args, commands::solver_sweep(&cfg, args.seed, args.parallel)?)
        }
        Command::Robustness(args) => {
            let cfg = load_config(&args.config)?;
            emit(args, commands::robustness(&cfg, args.seed)?)
        }
    }
}
