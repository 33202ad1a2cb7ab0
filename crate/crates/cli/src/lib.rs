//! Command-line front end for Bayesian spatial function-on-function
//! regression: dataset simulation, model fitting, functional kriging,
//! simultaneous inference on the regression surface and a universal-kriging
//! baseline. Every command reads and writes plain CSV/JSON files.

pub mod commands;
pub mod config;
pub mod draws;
pub mod error;
pub mod io;

use clap::{Parser, Subcommand};

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "sfofr", version, about = "Bayesian spatial function-on-function regression")]
pub struct Cli {
    /// Worker threads for parallel chains.
    #[arg(long, global = true, env = "SFOFR_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with a known regression surface.
    Simulate(commands::simulate::SimulateArgs),
    /// Fit FoFR, SFoFR or PSFoFR and persist the posterior draws.
    Fit(commands::fit::FitArgs),
    /// Predict curves at new sites from a fitted run.
    Predict(commands::predict::PredictArgs),
    /// Simultaneous bands, SimBaS and scores for a fitted run.
    Summarize(commands::summarize::SummarizeArgs),
    /// Universal kriging of the response curves.
    BaselineUk(commands::baseline_uk::BaselineUkArgs),
}

/// Run one command; the returned JSON value is a short report for stdout.
pub fn run(cli: Cli) -> CliResult<serde_json::Value> {
    match cli.command {
        Command::Simulate(a) => commands::simulate::run(&a),
        Command::Fit(a) => commands::fit::run(&a, cli.threads),
        Command::Predict(a) => commands::predict::run(&a),
        Command::Summarize(a) => commands::summarize::run(&a),
        Command::BaselineUk(a) => commands::baseline_uk::run(&a),
    }
}

/// Parse `args` (program name first) and run.
pub fn run_from<I, T>(args: I) -> CliResult<serde_json::Value>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Config(e.to_string()))?;
    run(cli)
}
