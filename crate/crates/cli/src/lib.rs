//! Command-line driver for `funbipart`.
//!
//! Each subcommand reads manifests and configuration, calls the core
//! library, and writes JSON and CSV artifacts from a single thread once all
//! parallel work has finished.

pub mod commands;
pub mod error;
pub mod formats;

use clap::{Parser, Subcommand};

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "funbipart",
    version,
    about = "Bi-partition clustering of multivariate periodic series"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter, trim and align raw recordings into an aligned archive.
    Preprocess(commands::preprocess::PreprocessArgs),
    /// Select degrees, decompose, fit the (K, L) grid and write the report.
    Fit(commands::fit::FitArgs),
    /// Draw a simulated sample as an aligned archive with true labels.
    Simulate(commands::simulate::SimulateArgs),
    /// Run the simulation benchmark and write ARI per method.
    Benchmark(commands::benchmark::BenchmarkArgs),
    /// Cross-tabulate the partitions of a fit and relate them to a covariate.
    Report(commands::report::ReportArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(a) => commands::preprocess::run(&a),
        Command::Fit(a) => commands::fit::run(&a),
        Command::Simulate(a) => commands::simulate::run(&a),
        Command::Benchmark(a) => commands::benchmark::run(&a),
        Command::Report(a) => commands::report::run(&a),
    }
}
