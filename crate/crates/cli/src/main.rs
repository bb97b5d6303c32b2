//! `velander`: config-driven runs of ingestion, fitting, evaluation,
//! synthetic data generation and optimality verification.

mod commands;
mod config;
mod data;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use velander_core::Constraint;

use crate::config::Overrides;
use crate::output::MissingInput;

#[derive(Parser)]
#[command(name = "velander", version, about = "Quantile Velander-formula peak-load models")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `constraint` (c1, c2, c3 or c4).
    #[arg(long, global = true, value_parser = parse_constraint)]
    constraint: Option<Constraint>,
    /// Overrides `out_dir`.
    #[arg(long = "out", global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean meter CSVs and write per-dataset records and cleaning reports.
    Ingest,
    /// Fit quantile coefficients on the ingested records.
    Fit,
    /// Run the enabled analyses (cv, tld, sld, aggregation, curves).
    Evaluate,
    /// Write synthetic meter CSVs.
    Synth,
    /// Check fits on small subsets against the exhaustive oracle.
    Verify,
}

fn parse_constraint(s: &str) -> Result<Constraint, String> {
    s.parse().map_err(|e: velander_core::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        constraint: cli.constraint,
        out_dir: cli.out,
    };
    let result = config::load(cli.config.as_deref(), &overrides).and_then(|run| match cli.command {
        Command::Ingest => commands::ingest(&run),
        Command::Fit => commands::fit_cmd(&run),
        Command::Evaluate => commands::evaluate(&run),
        Command::Synth => commands::synth(&run),
        Command::Verify => commands::verify(&run),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<MissingInput>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
