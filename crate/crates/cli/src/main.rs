//! `remos <subcommand> --config <path> [--seed N] [--out <dir>] [key=value ...]`

mod config;
mod error;
mod eval;
mod gen_data;
mod inspect;
mod manifest;
mod sample;
mod train;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "remos", version, about = "Reactive two-person motion synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: current directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value` overrides applied on top of the configuration file.
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic interaction pairs and a window manifest.
    GenData(Common),
    /// Train one stage of the cascade.
    Train(Common),
    /// Synthesize a reactor for an actor motion file.
    Sample(Common),
    /// Synthesize a reactor under edit constraints.
    Edit(Common),
    /// Compute metrics and write a report.
    Eval(Common),
    /// Dump schedules, masks, trajectories, loss curves or configuration.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        schedule: bool,
        #[arg(long)]
        masks: bool,
        #[arg(long)]
        trajectory: bool,
        #[arg(long)]
        loss_curve: bool,
        #[arg(long)]
        dump_config: bool,
    },
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(std::io::Error::other(e)))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads `REMOS_THREADS`. The pipeline runs on one thread, so the cap
/// is only validated and reported.
fn thread_cap() -> CliResult<Option<usize>> {
    match std::env::var("REMOS_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("REMOS_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    if let Some(n) = thread_cap()? {
        log::debug!("worker cap {n}");
    }
    let load = |c: &Common| RunConfig::load(c.config.as_deref(), &c.overrides, c.seed);
    let out = |c: &Common| c.out.clone().unwrap_or_else(|| PathBuf::from("."));
    match &cli.command {
        Command::GenData(c) => gen_data::run(&load(c)?, &out(c)),
        Command::Train(c) => train::run(&load(c)?, &out(c)),
        Command::Sample(c) => sample::run_sample(&load(c)?, &out(c)),
        Command::Edit(c) => sample::run_edit(&load(c)?, &out(c)),
        Command::Eval(c) => eval::run(&load(c)?, &out(c)),
        Command::Inspect {
            common,
            schedule,
            masks,
            trajectory,
            loss_curve,
            dump_config,
        } => {
            let flags = inspect::InspectFlags {
                schedule: *schedule,
                masks: *masks,
                trajectory: *trajectory,
                loss_curve: *loss_curve,
                dump_config: *dump_config,
            };
            inspect::run(&load(common)?, flags, common.out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({
                "error": e.class(),
                "code": e.exit_code(),
                "message": e.to_string(),
            });
            eprintln!("{msg}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
