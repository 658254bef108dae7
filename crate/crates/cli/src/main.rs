//! `tvcm`: fit, select, cross-validate and benchmark time-varying
//! coefficient models from the command line.

mod bench;
mod config;
mod crossval;
mod fit;
mod output;
mod select;
mod simulate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(
    name = "tvcm",
    version,
    about = "Time-varying coefficient models for longitudinal data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one engine and write fit.json, curves.csv and manifest.json
    Fit(fit::FitArgs),
    /// Choose knot counts by PCV and print the candidate table
    Select(select::SelectArgs),
    /// Run seeded replications of a simulation scenario
    Simulate(simulate::SimulateArgs),
    /// Time posterior draw generation for Gibbs and VB
    Bench(bench::BenchArgs),
    /// L-fold cross-validated prediction error
    Crossval(crossval::CrossvalArgs),
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<tvcm::TvcmError>())
        .map_or("usage", |e| e.kind())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => fit::run(a),
        Command::Select(a) => select::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::Bench(a) => bench::run(a),
        Command::Crossval(a) => crossval::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let body = json!({
                "error": {
                    "kind": error_kind(&err),
                    "message": format!("{err:#}"),
                }
            });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
