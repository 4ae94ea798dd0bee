//! Command-line front end: `gen`, `train`, `refine`, `eval`, `diag`,
//! `report` and `replay`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

pub mod args;
pub mod commands;
pub mod error;
pub mod io;

use std::ffi::OsString;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::Parser;

pub use error::{CliError, CliResult};
pub use io::RunManifest;

use args::{Cli, Command, DiagCommand};
use io::Invocation;

/// Runs one command line (program name first) and returns the exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let inv = Invocation { args: argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect(), started: Instant::now() };
    match execute(cli.command, &inv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command, inv: &Invocation) -> CliResult<()> {
    match command {
        Command::Gen(a) => commands::gen::run(&a, inv),
        Command::Train(a) => commands::train::run(&a, inv),
        Command::Refine(a) => commands::refine::run(&a, inv),
        Command::Eval(a) => commands::eval::run(&a, inv),
        Command::Diag(DiagCommand::ScoreHist(a)) => commands::diag::score_hist(&a, inv),
        Command::Diag(DiagCommand::DotHist(a)) => commands::diag::dot_hist(&a, inv),
        Command::Diag(DiagCommand::CSweep(a)) => commands::diag::c_sweep(&a, inv),
        Command::Report(a) => commands::report::run(&a, inv),
        Command::Replay(a) => commands::replay::run(&a),
    }
}
