//! `homrf` command-line front end.
//!
//! Exit status: 0 on success, 2 for usage errors, 3 for numerical aborts and
//! 1 for any other failure.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::UsageError;

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Solve(a) => commands::solve(a),
        Command::Generate(a) => commands::generate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Compare(a) => commands::compare_cmd(a),
    }
}

fn status(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<homrf_core::Error>() {
        Some(e) if e.is_numerical() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(status(&e))
        }
    }
}
