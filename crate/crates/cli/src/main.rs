mod args;
mod commands;
mod plots;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use thiserror::Error;

use args::{Cli, Command};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] sos_core::SosError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(String),
    #[error("solver did not converge {0}")]
    NotConverged(String),
    #[error("certificate precondition violated: {0}")]
    Precondition(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::NotConverged(_) => 2,
            CliError::Precondition(_) => 3,
            _ => 1,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--workers: {e}")))?;
    }
    match &cli.command {
        Command::FitPsd(a) => commands::fit_psd(a),
        Command::FitConvex(a) => commands::fit_convex(a),
        Command::Predict(a) => commands::predict(a),
        Command::Certify(a) => commands::certify(a),
        Command::Gen(g) => commands::gen(g),
        Command::Cv(a) => commands::cv(a),
        Command::Benchmark(a) => commands::benchmark(a),
        Command::Bures(a) => commands::bures(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
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
