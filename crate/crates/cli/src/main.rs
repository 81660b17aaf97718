//! `zipscan` command-line interface.
//!
//! Exit codes: 0 on success, 2 when `scan` rejects the null at `--alpha`,
//! 1 on any error.

mod args;
mod commands;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use args::{Cli, Command};

fn run(cli: &Cli) -> Result<ExitCode> {
    let mut code = ExitCode::SUCCESS;
    match &cli.command {
        Command::Scan(a) => {
            if commands::cmd_scan(a)? {
                code = ExitCode::from(2);
            }
        }
        Command::Calibrate(a) => commands::cmd_calibrate(a)?,
        Command::Simulate(a) => commands::cmd_simulate(a)?,
        Command::Zones(a) => commands::cmd_zones(a)?,
    }
    Ok(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors share the generic error code; 2 is reserved for alerts.
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.threads {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .context("building thread pool")
            .and_then(|pool| pool.install(|| run(&cli))),
        None => run(&cli),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
