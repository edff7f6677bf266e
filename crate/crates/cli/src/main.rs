//! `trustcnn` — dataset generation, training, saliency export, checkpoint
//! comparison and the multi-seed experiment suite behind one binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/IO error, 3 numerical
//! failure (divergence abort). `TRUSTCNN_THREADS` caps worker parallelism.

mod commands;
mod config;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use trustcnn::Error;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NanAbort { .. } => 3,
        Error::InvalidConfig(_)
        | Error::UnknownMethod { .. }
        | Error::InvalidClassCount { .. }
        | Error::UnitInterval { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match config::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
