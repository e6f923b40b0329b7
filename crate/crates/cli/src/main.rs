//! `maskae`: masked-autoencoder image encryption and compression pipeline.
//!
//! Subcommands: mask-gen, train, encrypt, decrypt, analyze. All runs are
//! seed-deterministic; identical inputs and seeds produce byte-identical
//! output files. Exit codes: 0 success, 2 usage/validation, 3 file format,
//! 4 numerical failure, 5 I/O.

mod commands;
mod container;

use std::process::ExitCode;

use clap::Parser;

use commands::Cli;
use maskae_core::Error;

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Invalid(_) | Error::Shape(_) => 2,
        Error::Format(_) => 3,
        Error::Numeric(_) => 4,
        Error::Io(_) => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
