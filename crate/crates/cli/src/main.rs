use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = esf_cli::Cli::parse();
    match esf_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
