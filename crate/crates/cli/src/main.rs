//! `semiflow`: run verification, selection, semigroup and convergence
//! experiments from a TOML config.
//!
//! Exit status: 0 when every check passes, 1 when a check fails, 2 for
//! usage, configuration and domain errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::Run;
use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "semiflow", version, about = "Semiflow selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out` in the config, defaults to `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Weak-form, energy and monotonicity checks on every trajectory.
    Verify,
    /// Run the selection cascade and write its trace and the selected bundle.
    Select,
    /// Compare the selection at t1 + t2 with the restart from t1.
    Semigroup {
        /// Restrict to times in the full-measure set.
        #[arg(long)]
        restricted: bool,
        #[arg(long)]
        t1: Option<f64>,
        #[arg(long)]
        t2: Option<f64>,
    },
    /// Refinement study with fitted orders.
    Convergence,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let path = cli.config.ok_or_else(|| anyhow::anyhow!("--config is required"))?;
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let name = match &cli.command {
        Command::Verify => "verify",
        Command::Select => "select",
        Command::Semigroup { restricted, t1, t2 } => {
            cfg.semigroup.restricted |= *restricted;
            if let Some(t1) = t1 {
                cfg.semigroup.t1 = vec![*t1];
            }
            if let Some(t2) = t2 {
                cfg.semigroup.t2 = vec![*t2];
            }
            "semigroup"
        }
        Command::Convergence => "convergence",
    };
    let out = cli
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    let started = std::time::SystemTime::now();
    let run = Run { cfg: &cfg, out: &out };
    let pass = match cli.command {
        Command::Verify => run.verify()?,
        Command::Select => run.select()?,
        Command::Semigroup { .. } => run.semigroup()?,
        Command::Convergence => run.convergence()?,
    };
    run.write_metadata(name, started)?;
    eprintln!("{name}: {}", if pass { "pass" } else { "FAIL" });
    Ok(pass)
}
