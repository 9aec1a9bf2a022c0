//! `sbridge`: command-line front end of the data-driven Schrödinger bridge
//! solver. Five subcommands share one TOML configuration format; every run
//! writes a manifest next to its numeric artifacts and is fully
//! deterministic under a fixed seed.

mod config;
mod io;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "sbridge", version, about = "Data-driven Schrödinger bridge solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the half-bridge factor Φ against an explicit φ̂₁.
    Halfbridge(CommonArgs),
    /// Solve the full bridge between two sample sets.
    Solve(CommonArgs),
    /// Evaluate ρ_t frames from a stored solution document.
    Interpolate(CommonArgs),
    /// Bridge-based importance-sampling estimate of ∫f·ρ₁.
    Importance(CommonArgs),
    /// Grid-based Fortet iteration with closed-form marginals.
    #[command(name = "fortet-grid")]
    FortetGrid(CommonArgs),
}

#[derive(Parser)]
struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Root seed; overrides the config value.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config value.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rayon thread count (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Halfbridge(a) => ("halfbridge", a),
        Command::Solve(a) => ("solve", a),
        Command::Interpolate(a) => ("interpolate", a),
        Command::Importance(a) => ("importance", a),
        Command::FortetGrid(a) => ("fortet-grid", a),
    };
    match execute(name, args) {
        Ok(outcome) if outcome.converged => ExitCode::SUCCESS,
        Ok(_) => {
            eprintln!("run completed without reaching its convergence criterion");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn execute(name: &str, args: &CommonArgs) -> Result<run::RunOutcome> {
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()?;
    }
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = Some(seed);
    }
    let out_dir = args
        .out
        .clone()
        .or_else(|| config.io.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    run::run(name, &config, &out_dir)
}
