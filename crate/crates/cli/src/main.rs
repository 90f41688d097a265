use std::process::ExitCode;

use clap::Parser;
use cumolos_cli::{run, Cli, Outcome, OUT_ENV};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let env_out = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(Into::into);
    match run(&cli, env_out) {
        Ok(Outcome::Printed(text)) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Ok(Outcome::RunDir(dir)) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
