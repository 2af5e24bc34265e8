use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = decay_lab::cli::Cli::parse();
    match decay_lab::cli::run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
