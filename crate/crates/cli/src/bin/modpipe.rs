use std::process::ExitCode;

use clap::Parser;
use modpipe_cli::modpipe::{main_with, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_with(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("modpipe: {e}");
            ExitCode::FAILURE
        }
    }
}
