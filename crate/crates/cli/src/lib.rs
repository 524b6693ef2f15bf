//! `qh`: exact hit-time laws, query choice, sequential tests and heatmaps
//! for the query/hit model, plus ingestion of behavioral logs into symbol
//! files. Exit codes: 0 success, 1 runtime failure, 2 usage or
//! configuration error.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub mod commands;
pub mod config;
pub mod ingest;
pub mod output;

use config::{ExperimentConfig, Settings, SCHEMA};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qh", version, about = "Query/hit sequential hypothesis testing", after_help = SCHEMA)]
pub struct Cli {
    /// Flat TOML file with any of the keys below; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub exp: ExperimentConfig,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IngestFormat {
    /// CSV with x and y columns; one bit per movement.
    Xy,
    /// CSV with one numeric column; eight bins per value.
    Timings,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hit-time law of one pattern.
    Pmf {
        #[arg(long)]
        pattern: String,
        /// Binary IID source with this P(Z = 1).
        #[arg(long, conflicts_with = "markov_p")]
        iid_p: Option<f64>,
        /// Persistent Markov source with this parameter.
        #[arg(long)]
        markov_p: Option<f64>,
        /// Starting Markov context; the initial law when absent.
        #[arg(long)]
        start_context: Option<usize>,
    },
    /// KL divergence, expected hit times and efficiency of every query.
    Stats,
    /// Best query as a function of the belief.
    OptimalQuery {
        #[arg(long, default_value = "0.01:0.99:99")]
        pi_grid: String,
    },
    /// Maximum-ratio query cycle and the edge weights behind it.
    Cycle,
    /// Sequential tests: outcome JSON, optional trajectory CSV.
    Simulate {
        /// CSV of the first run's beliefs, queries and hit times.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Accuracy over a grid of source parameters.
    Heatmap,
    /// Converts a CSV log into a symbol file.
    Ingest {
        #[arg(long, value_enum)]
        format: IngestFormat,
        #[arg(long)]
        input: PathBuf,
        /// Swap the horizontal/vertical bit (xy only).
        #[arg(long)]
        invert: bool,
        /// Emit timing bins as three bits each (timings only).
        #[arg(long)]
        binary: bool,
        /// Column holding timings (timings only).
        #[arg(long, default_value = "value")]
        column: String,
    },
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run_cli(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("qh: {e}");
            if let CliError::Config(_) = e {
                eprintln!("\n{SCHEMA}");
            }
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let base = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let settings = Settings::resolve(base.overlay(cli.exp))?;
    match cli.command {
        Command::Pmf { pattern, iid_p, markov_p, start_context } => {
            commands::pmf(&settings, &pattern, iid_p, markov_p, start_context)
        }
        Command::Stats => commands::stats(&settings),
        Command::OptimalQuery { pi_grid } => commands::optimal_query(&settings, &pi_grid),
        Command::Cycle => commands::cycle(&settings),
        Command::Simulate { trajectory } => commands::simulate(&settings, trajectory.as_deref()),
        Command::Heatmap => commands::heatmap(&settings),
        Command::Ingest { format, input, invert, binary, column } => {
            commands::ingest(&settings, format, &input, invert, binary, &column)
        }
    }
}
