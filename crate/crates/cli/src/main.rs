//! `mjcm` — command-line front end for the m-photon two-level model.
//!
//! Every subcommand takes one JSON run configuration. Exit codes:
//!
//! | code | meaning                                          |
//! |------|--------------------------------------------------|
//! | 0    | success                                          |
//! | 1    | configuration or usage error                     |
//! | 2    | closure verification failed                      |
//! | 3    | integration aborted (norm/trace drift blew up)   |
//! | 4    | multiplier fit did not converge / target infeasible |
//! | 5    | coefficient conventions differ                   |

mod commands;
mod config;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use mjcm_core::Error;

#[derive(Parser)]
#[command(
    name = "mjcm",
    version,
    about = "Numerical laboratory for a two-level system exchanging m photons with a field mode"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the structure constants on the safe window and check that the
    /// operator family closes under commutation with the Hamiltonian
    VerifyClosure(CommonArgs),
    /// Evolve the configured initial state and export the time series
    Simulate(CommonArgs),
    /// Fit maximum-entropy multipliers to target mean values
    FitMep(CommonArgs),
    /// Compare the two closed-form coefficient conventions entry by entry
    CompareCoefficients(CommonArgs),
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Self::VerifyClosure(a)
            | Self::Simulate(a)
            | Self::FitMep(a)
            | Self::CompareCoefficients(a) => a,
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the JSON run configuration
    #[arg(long)]
    config: PathBuf,
    /// Reserved for future stochastic features; accepted and ignored
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress stdout reporting (output files are still written)
    #[arg(long)]
    quiet: bool,
}

/// Exit code for a failure the core library reported.
fn exit_code_for(error: &Error) -> u8 {
    match error {
        Error::IntegrationAborted { .. } => 3,
        Error::FitNotConverged { .. } | Error::MeanOutOfRange { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version exit 0; any usage problem is exit 1, keeping
            // code 2 unambiguous for closure failures.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let args = cli.command.args();

    let text = match fs::read_to_string(&args.config) {
        Ok(text) => text,
        Err(e) => {
            eprintln!("cannot read {}: {e}", args.config.display());
            return ExitCode::from(1);
        }
    };
    let cfg: RunConfig = match serde_json::from_str(&text) {
        Ok(cfg) => cfg,
        Err(e) => {
            // serde_json points at line and column; deny_unknown_fields names
            // the offending key.
            eprintln!("invalid configuration {}: {e}", args.config.display());
            return ExitCode::from(1);
        }
    };

    let result = match &cli.command {
        Command::VerifyClosure(_) => commands::verify_closure(&cfg, args.quiet),
        Command::Simulate(_) => commands::simulate(&cfg, args.quiet),
        Command::FitMep(_) => commands::fit_mep(&cfg, args.quiet),
        Command::CompareCoefficients(_) => commands::compare_coefficients(&cfg, args.quiet),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
