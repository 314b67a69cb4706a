//! `nextbest train|evaluate|recommend|serve --config <path>`
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 artifact error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::{Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Artifact(String),
}

const USAGE_EXIT: u8 = 1;

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Data(_) => 2,
            CliError::Artifact(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "nextbest", version, about = "Next best action recommendations for running process cases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the predictor, index the training suffixes and write the artifacts.
    Train(CommonArgs),
    /// Compare recommendations with plain prediction on a test log.
    Evaluate(CommonArgs),
    /// Recommend the next action for the case events given as JSON on stdin.
    Recommend(CommonArgs),
    /// Serve the HTTP API until interrupted.
    Serve(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Artifact directory, overriding `artifacts` in the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let overrides = Overrides {
            k: self.k,
            seed: self.seed,
            workers: self.workers,
            out: self.out.clone(),
        };
        let config = RunConfig::load(&self.config, &overrides)?;
        if let Some(n) = config.workers {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("cannot size the worker pool: {e}");
            }
        }
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => commands::train(&a.load()?),
        Command::Evaluate(a) => commands::evaluate(&a.load()?),
        Command::Recommend(a) => commands::recommend(&a.load()?, std::io::stdin().lock()),
        Command::Serve(a) => commands::serve(&a.load()?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(USAGE_EXIT);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
