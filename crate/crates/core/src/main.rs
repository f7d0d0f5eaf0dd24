use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use teachlab::harness::cli::{execute, Cli};
use teachlab::harness::HarnessError;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::from(e.use_stderr()));
        }
    };
    let name = std::env::args().nth(1).unwrap_or_default();
    match execute(&cli).with_context(|| format!("{name} failed")) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<HarnessError>().map_or(1, HarnessError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
