//! `hattn`: configuration-driven experiments on hybrid-attention models.

mod artifact;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Run;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "hattn", version, about = "Train, probe and cost hybrid RoPE/NoPE attention models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model; writes checkpoint.bin, metrics.csv, train_summary.json.
    Train(Common),
    /// Score a checkpoint on the needles grid.
    Niah(Common),
    /// Attention mass and entropy from a checkpoint or saved traces.
    Analyze(Common),
    /// Analytical attention FLOPs and KV-cache size.
    Cost(Common),
    /// Join the outputs of several runs into one table.
    Compare(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed; overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn dispatch(command: Command) -> Result<(), CliError> {
    let (f, common): (fn(&Run) -> Result<artifact::Sink, CliError>, Common) = match command {
        Command::Train(c) => (commands::train, c),
        Command::Niah(c) => (commands::niah, c),
        Command::Analyze(c) => (commands::analyze, c),
        Command::Cost(c) => (commands::cost, c),
        Command::Compare(c) => (commands::compare, c),
    };
    let loaded = config::load(&common.config)?;
    let run = Run::new(loaded, common.out, common.seed);
    let sink = f(&run)?;
    log::info!("{} artifacts in {}", sink.written().len(), sink.dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
