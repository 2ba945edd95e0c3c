mod config;
mod output;
mod run;

use std::process::ExitCode;

use clap::Parser;
use mfunc::{ErrorKind, MfnError};

use crate::config::Cli;
use crate::run::UsageError;

const EXIT_USAGE: u8 = 2;
const EXIT_RESOURCE: u8 = 3;
const EXIT_IO: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<MfnError>() {
        return match e.kind() {
            ErrorKind::Usage => EXIT_USAGE,
            ErrorKind::Resource | ErrorKind::Numerical => EXIT_RESOURCE,
            ErrorKind::Io => EXIT_IO,
        };
    }
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    if err.chain().any(|c| c.is::<std::io::Error>() || c.is::<serde_json::Error>()) {
        return EXIT_IO;
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match run::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
