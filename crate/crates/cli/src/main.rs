use std::process::ExitCode;

use clap::Parser;
use shapeopt_cli::{dispatch, Cli, CliError};

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(rec) if rec.failed() > 0 => {
            let e = CliError::ValidationFailed { failed: rec.failed() };
            eprintln!("shapeopt: {e}");
            ExitCode::from(e.exit_code())
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("shapeopt: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
