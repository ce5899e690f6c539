use std::process::ExitCode;

use clap::Parser;
use iwgan_cli::commands::{run, Cli};
use iwgan_cli::config::ConfigError;

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.downcast_ref::<ConfigError>().is_some()
                || matches!(e.downcast_ref::<iwgan::Error>(), Some(iwgan::Error::Config(_)));
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}
