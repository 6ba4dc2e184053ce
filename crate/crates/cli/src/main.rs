use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = chorus_cli::Cli::parse();
    match chorus_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
