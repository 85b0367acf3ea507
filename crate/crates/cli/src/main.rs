use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = wheelleg_cli::Cli::parse();
    ExitCode::from(wheelleg_cli::execute(&cli))
}
