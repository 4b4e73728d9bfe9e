//! `rbal`: balanced embeddings from the command line.
//!
//! Exit codes: 0 success, 1 usage, configuration or validation error,
//! 2 solver did not converge.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Observable, Outcome, StabilityReport};
use config::{Common, Settings};

#[derive(Debug, Parser)]
#[command(name = "rbal", version, about = "Balanced and relatively balanced projective embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for a balanced inner product.
    Balance(Common),
    /// Solve for a relatively balanced inner product.
    Relative(Common),
    /// Asymptotic expansion diagnostics over a range of levels.
    Expansion {
        #[arg(value_enum)]
        observable: Observable,
        #[command(flatten)]
        common: Common,
    },
    /// Stability reports.
    Stability {
        #[arg(value_enum)]
        report: StabilityReport,
        #[command(flatten)]
        common: Common,
    },
    /// Write the sampled frame of a geometry to frame.json.
    ExportFrame(Common),
}

fn run(cmd: Command) -> anyhow::Result<Outcome> {
    match cmd {
        Command::Balance(c) => commands::balance(&Settings::resolve(&c)?),
        Command::Relative(c) => commands::relative(&Settings::resolve(&c)?),
        Command::Expansion { observable, common } => commands::expansion(&Settings::resolve(&common)?, observable),
        Command::Stability { report, common } => commands::stability(&Settings::resolve(&common)?, report),
        Command::ExportFrame(c) => commands::export_frame(&Settings::resolve(&c)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("rbal: solver did not converge; see report.json");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("rbal: {e:#}");
            ExitCode::from(1)
        }
    }
}
