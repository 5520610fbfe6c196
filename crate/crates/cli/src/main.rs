use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use funbipart_cli::{run, Cli, CliError};

const THREADS_VAR: &str = "FUNBIPART_THREADS";

fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value.trim().parse().map_err(|_| {
        CliError::Usage(format!(
            "{THREADS_VAR} must be a positive integer, got {value:?}"
        ))
    })?;
    if n == 0 {
        return Err(CliError::Usage(format!("{THREADS_VAR} must be at least 1")).into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("cannot start the worker pool")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| run(cli).map_err(anyhow::Error::from));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            ExitCode::from(code)
        }
    }
}
