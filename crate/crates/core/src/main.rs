use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = cbgm::cli::Cli::parse();
    match cbgm::cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
