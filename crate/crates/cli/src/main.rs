use anyhow::Result;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use wgdflow_cli::config::Config;
use wgdflow_cli::experiments;

/// Particle-based sampling experiments: Wasserstein gradient descent on
/// the KL objective, closed-form theory checks, and baseline comparisons.
#[derive(Parser)]
#[command(name = "wgdflow", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory (overrides the config's experiment.out)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed override (overrides the config's experiment.seed)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress output
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file
    Run { config: PathBuf },
    /// Run the closed-form Gaussian theory checks
    TheoryCheck { config: PathBuf },
    /// Run several methods on one target and emit comparison tables
    Compare { config: PathBuf },
}

fn load(path: &PathBuf, seed: Option<u64>) -> Result<Config> {
    let mut cfg = Config::load(path)?;
    if let Some(seed) = seed {
        cfg.set("experiment.seed", seed);
    }
    Ok(cfg)
}

fn out_dir(cli_out: &Option<PathBuf>, cfg: &Config) -> PathBuf {
    cli_out
        .clone()
        .unwrap_or_else(|| PathBuf::from(cfg.str_or("experiment.out", "out")))
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = load(config, cli.seed)?;
            let dir = out_dir(&cli.out, &cfg);
            experiments::cmd_run(cfg, &dir, cli.quiet)?;
            Ok(true)
        }
        Command::TheoryCheck { config } => {
            let cfg = load(config, cli.seed)?;
            let dir = out_dir(&cli.out, &cfg);
            experiments::cmd_theory_check(cfg, &dir, cli.quiet)
        }
        Command::Compare { config } => {
            let cfg = load(config, cli.seed)?;
            let dir = out_dir(&cli.out, &cfg);
            experiments::cmd_compare(cfg, &dir, cli.quiet)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: theory-check: one or more checks failed");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
