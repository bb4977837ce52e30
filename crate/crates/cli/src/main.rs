//! `perk`: phantoms, training, estimation and analysis from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use perk::config::RunConfig;
use perk::Error;

#[derive(Debug, Parser)]
#[command(name = "perk", version, about = "Kernel-regression parameter estimation for quantitative MRI")]
struct Cli {
    /// TOML run configuration. Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory. Relative input paths are resolved against it.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a phantom: noisy data, κ, masks, truth and ROIs.
    Phantom,
    /// Train an RFF estimator on data simulated from priors fit to the test images.
    Train,
    /// Apply a trained estimator to every masked voxel.
    Estimate,
    /// Grid-search (VPM) baseline maps.
    Vpm,
    /// Sweep (λ, ρ) on simulated holdout data.
    Holdout,
    /// Fisher information, CRLB, and conditional bias and covariance.
    Analyze,
    /// Compare analytic signals against the isochromat simulator.
    OracleCheck,
}

/// Process exit status: 1 usage or config, 2 data, 3 numerical.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 1,
        Error::Numerical(_) | Error::NotConverged { .. } => 3,
        Error::InvalidInput(_) | Error::DimensionMismatch { .. } | Error::Format { .. } | Error::Io(_) => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: &Cli) -> perk::Result<u8> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(&cli.out)?;
    println!("{}", cfg.seeds());
    let ctx = commands::Context { cfg, out: cli.out.clone() };
    match cli.command {
        Command::Phantom => commands::phantom(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Estimate => commands::estimate(&ctx),
        Command::Vpm => commands::vpm(&ctx),
        Command::Holdout => commands::holdout(&ctx),
        Command::Analyze => commands::analyze(&ctx),
        Command::OracleCheck => commands::oracle_check(&ctx),
    }
}
