//! Experiment runner binding the lab modules into reproducible runs.

mod checkpoint;
mod commands;
mod config;
mod data;
mod eval;
mod rundir;
mod tensorfile;

use anyhow::Result;
use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use rundir::RunDir;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "bolab",
    about = "Desk-scale black-oil surrogate laboratory",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Experiment configuration file (section.key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for artifacts (created, locked for the run).
    #[arg(long)]
    out: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Config overrides, e.g. --override train.k=5 (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and persist the training ensemble.
    GenData(CommonArgs),
    /// Train the surrogate configured by train.paradigm.
    Train(CommonArgs),
    /// Roll the trained surrogate over a held-out ensemble.
    Rollout(CommonArgs),
    /// Check the per-step rollout error bound (exit 2 on violation).
    VerifyRollout(CommonArgs),
    /// Check the coupled-trajectory divergence bound (exit 2 on violation).
    VerifyCoupling(CommonArgs),
    /// Check TBPTT gradient-bias decay (exit 2 on violation).
    VerifyTbptt(CommonArgs),
    /// Train the physics-weight sweep and check the contraction trend.
    VerifySpectral(CommonArgs),
    /// Check the mode-truncation rates (exit 2 on violation).
    VerifyGibbs(CommonArgs),
    /// Consolidate run artifacts into the final report.
    Report(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::GenData(a)
            | Command::Train(a)
            | Command::Rollout(a)
            | Command::VerifyRollout(a)
            | Command::VerifyCoupling(a)
            | Command::VerifyTbptt(a)
            | Command::VerifySpectral(a)
            | Command::VerifyGibbs(a)
            | Command::Report(a) => a,
        }
    }
}

fn resolve_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    cfg = cfg.apply_overrides(&args.overrides)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn configure_threads() {
    if let Ok(v) = std::env::var("BOTF_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

fn run() -> Result<ExitCode> {
    configure_threads();
    let cli = Cli::parse();
    let args = cli.command.common();
    let cfg = resolve_config(args)?;
    let run = RunDir::acquire(&args.out)?;
    run.write_manifest(&cfg.to_config_text(), cfg.seed)?;

    let violated = match &cli.command {
        Command::GenData(_) => {
            commands::gen_data(&cfg, &run)?;
            false
        }
        Command::Train(_) => {
            commands::train(&cfg, &run)?;
            false
        }
        Command::Rollout(_) => {
            commands::rollout(&cfg, &run)?;
            false
        }
        Command::VerifyRollout(_) => commands::verify_rollout(&cfg, &run)?.violated,
        Command::VerifyCoupling(_) => commands::verify_coupling(&cfg, &run)?.violated,
        Command::VerifyTbptt(_) => commands::verify_tbptt(&cfg, &run)?.violated,
        Command::VerifySpectral(_) => commands::verify_spectral(&cfg, &run)?.violated,
        Command::VerifyGibbs(_) => commands::verify_gibbs(&cfg, &run)?.violated,
        Command::Report(_) => {
            commands::report(&cfg, &run)?;
            false
        }
    };
    Ok(if violated {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
