//! `fbsdiff`: run frequency band substitution pipelines on tensor files.
//!
//! Exit codes: 0 success, 1 configuration error, 2 I/O or tensor format
//! error, 3 bridge failure.

mod commands;
mod error;
mod manifest;
mod settings;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::{BandReportArgs, RunArgs, SweepArgs};

#[derive(Debug, Parser)]
#[command(name = "fbsdiff", version, about = "Frequency band substitution over DDIM trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one pipeline and write output.fbt plus manifest.json
    Run(RunArgs),
    /// Run once per threshold and write a correlation CSV
    Sweep(SweepArgs),
    /// Print DCT band-energy fractions of a tensor as JSON
    BandReport(BandReportArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Run(a) => commands::cmd_run(a),
        Command::Sweep(a) => commands::cmd_sweep(a),
        Command::BandReport(a) => commands::cmd_band_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fbsdiff: {e}");
            e.exit_code()
        }
    }
}
