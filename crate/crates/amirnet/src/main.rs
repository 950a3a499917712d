use std::process::ExitCode;

use amirnet::checkpoint::CheckpointError;
use amirnet::cli::{run, Cli};
use clap::Parser;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<CheckpointError>() {
                Some(CheckpointError::Missing(_)) => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
