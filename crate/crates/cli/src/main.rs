mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use temporal_relevance::Error;

use crate::args::Cli;

/// Bad input or configuration.
const EXIT_CONFIG: u8 = 2;
/// A numeric failure while computing.
const EXIT_NUMERIC: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFiniteValue(_)
        | Error::NegativeRelevance { .. }
        | Error::NoPositiveLogit
        | Error::DegenerateInput(_)
        | Error::IndexOutOfRange(_)
        | Error::WindowOutOfRange { .. } => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

fn report(kind: &str, message: &str) {
    let doc = serde_json::json!({"error": {"kind": kind, "message": message}});
    eprintln!("{doc}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("UsageError", e.to_string().trim());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(e.kind(), &e.to_string());
            ExitCode::from(exit_code(&e))
        }
    }
}
