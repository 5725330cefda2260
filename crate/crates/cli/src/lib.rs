//! Ingestion, subcommands and output persistence for the spatial abundance
//! model.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod manifest;
pub mod output;

use args::{Cli, Command};

/// Runs a parsed command line and returns the process exit status.
pub fn run(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Fit(flags) => commands::cmd_fit(flags),
        Command::Simulate(flags) => commands::cmd_simulate(flags),
        Command::Evaluate(flags) => commands::cmd_evaluate(flags),
        Command::Summarize(args) => commands::cmd_summarize(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
