//! `edgesched`: batch experiments over the MEC scheduler.
//!
//! Exit status: 0 success, 2 config error, 3 solver failure, 4 failed
//! assertion, 1 anything else. A JSON summary goes to stdout; failures are a
//! JSON object on stderr.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::Overrides;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "edgesched", version, about = "Frame-based MEC scheduling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Policy sweep; writes metrics.csv and pmfs.csv.
    Simulate(Common),
    /// Baseline value of configured states, printed as JSON.
    Value(Common),
    /// Online estimators and SGD on p_r; writes learning.csv and/or sgd.csv.
    Learn(Common),
    /// Paired simulation of the baseline and improved policies against the
    /// analytic value; writes bound_check.csv.
    BoundCheck(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a config key, e.g. `--set params.arrival_prob=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

type Handler = fn(&config::Loaded) -> Result<serde_json::Value, CliError>;

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    let (common, f): (Common, Handler) = match cli.command {
        Command::Simulate(c) => (c, commands::simulate),
        Command::Value(c) => (c, commands::value),
        Command::Learn(c) => (c, commands::learn),
        Command::BoundCheck(c) => (c, commands::bound_check),
    };
    let overrides = Overrides {
        seed: common.seed,
        workers: common.workers,
        out: common.out,
        set: common.set,
    };
    let loaded = config::load(&common.config, &overrides)?;
    f(&loaded)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            // Solver and assertion failures carry a JSON report as message.
            let detail = serde_json::from_str::<serde_json::Value>(&e.to_string()).unwrap_or(json!(e.to_string()));
            eprintln!("{}", json!({ "error": e.kind(), "detail": detail }));
            ExitCode::from(e.exit_code())
        }
    }
}
