//! Command-line front end: model files in, JSON or CSV reports out.
//!
//! Exit codes: 0 success, 1 I/O or numerical failure, 2 infeasible plan,
//! 3 invalid configuration or arguments, 4 cap exceeded, 5 verification failed.

pub mod commands;
pub mod config;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use crate::error::Error;
use crate::instrument::DEFAULT_Z;

pub use commands::{run_command, Output};
pub use config::{parse_config, ConfigError, ModelConfig, Parsed};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_INVALID: i32 = 3;
pub const EXIT_CAP: i32 = 4;
pub const EXIT_VERIFY_FAILED: i32 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Analyze,
    Plan,
    Simulate,
    Verify,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exact,
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Debug, Parser)]
#[command(name = "nmsim", version, about = "Product-formula simulation of time-local open-system dynamics")]
pub struct Args {
    /// Model file (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub command: Command,
    /// Number of time slices; overrides the planner's choice.
    #[arg(long)]
    pub m: Option<usize>,
    /// Target total error.
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    /// Normal quantile of the Wilson intervals.
    #[arg(long, default_value_t = DEFAULT_Z)]
    pub z: f64,
    #[arg(long, value_enum, default_value = "exact")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub max_circuits: Option<u64>,
    /// Report file; the report goes to standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::CapExceeded { .. } | Error::TrialCapExceeded { .. } => EXIT_CAP,
        Error::InvalidArgument(_)
        | Error::InvalidModel(_)
        | Error::DimensionMismatch(_)
        | Error::NotHermitian { .. }
        | Error::NotPositive { .. }
        | Error::TimeOutOfDomain { .. }
        | Error::NotGksl(_) => EXIT_INVALID,
        _ => EXIT_FAILURE,
    }
}

/// Parses the command line, runs the command and returns the exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    run(&args)
}

pub fn run(args: &Args) -> i32 {
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return EXIT_FAILURE;
        }
    };
    let parsed = match parse_config(&text) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return EXIT_INVALID;
        }
    };
    let output = match run_command(args, &parsed) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    if output.emit {
        let body = match args.format {
            Format::Json => &output.json,
            Format::Csv => &output.csv,
        };
        match &args.out {
            Some(path) => {
                if let Err(e) = report::write_atomic(path, body.as_bytes()) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return EXIT_FAILURE;
                }
                println!("{}", output.summary);
            }
            None => {
                print!("{body}");
                eprintln!("{}", output.summary);
            }
        }
    } else {
        eprintln!("{}", output.summary);
    }
    output.code
}
