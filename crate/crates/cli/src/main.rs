use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = platoon_cli::Cli::parse();
    ExitCode::from(platoon_cli::execute(&cli))
}
