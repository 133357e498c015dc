use std::process::ExitCode;

use clap::Parser;
use lowrank_td::cli::{self, Cli};

fn main() -> ExitCode {
    let args = Cli::parse();
    match cli::execute(&args, &mut std::io::stdout()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
