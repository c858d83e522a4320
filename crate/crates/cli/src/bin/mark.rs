use std::process::ExitCode;

use clap::Parser;
use modpipe_cli::mark::{main_with, MarkCli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_with(MarkCli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mark: {e}");
            ExitCode::FAILURE
        }
    }
}
