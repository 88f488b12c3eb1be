#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ott_core::Error;

use crate::commands::{NoRuns, TuneFailed};

#[derive(Parser)]
#[command(
    name = "ott",
    version,
    about = "Multivariate fiat pair trading through a crypto asset"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output root; defaults to `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel stages; defaults to all cores.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Rolling correlation/cointegration screen of the formation window.
    Screen(Common),
    /// Threshold grid search on formation data.
    Tune(Common),
    /// Backtest the configured strategy over the trading window.
    Backtest(Common),
    /// Compare all completed runs under the output root.
    Report(Common),
}

const EXIT_VALIDATION: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_SCREENING: u8 = 4;
const EXIT_INTERNAL: u8 = 5;

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<NoRuns>().is_some() {
        return EXIT_DATA;
    }
    if err.downcast_ref::<TuneFailed>().is_some() {
        return EXIT_INTERNAL;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Validation { .. } | Error::Config(_)) => EXIT_VALIDATION,
        Some(Error::Parse { .. } | Error::Data(_) | Error::Alignment(_) | Error::Domain { .. } | Error::Io(_)) => {
            EXIT_DATA
        }
        Some(Error::Screening(_)) => EXIT_SCREENING,
        Some(_) => EXIT_INTERNAL,
        None if err.downcast_ref::<std::io::Error>().is_some() => EXIT_DATA,
        None => EXIT_INTERNAL,
    }
}

fn execute(command: Command) -> anyhow::Result<()> {
    let (Command::Screen(common) | Command::Tune(common) | Command::Backtest(common) | Command::Report(common)) =
        &command;
    let cfg = config::parse_config(&common.config)?;
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(Error::validation("workers", "must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow::anyhow!("starting worker pool: {e}"))?;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    match command {
        Command::Screen(_) => commands::cmd_screen(&cfg, &out),
        Command::Tune(_) => commands::cmd_tune(&cfg, &out).map(drop),
        Command::Backtest(_) => commands::cmd_backtest(&cfg, &out).map(drop),
        Command::Report(_) => commands::cmd_report(&out).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
