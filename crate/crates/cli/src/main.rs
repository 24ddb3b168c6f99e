//! `mfp`: synthetic data, FP4 quantization and error-analysis experiments.
//!
//! Exit codes: 0 success, 2 usage, 3 bad data or files, 4 numerical failure.

mod analyze;
mod commands;
mod table;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "mfp", version, about = "Microscaling FP4 quantization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded i.i.d. unit-variance tensor
    Gen(commands::GenArgs),
    /// Quantize a tensor file into an MFPQ container
    Quantize(commands::QuantizeArgs),
    /// Reconstruct a tensor file from an MFPQ container
    Dequantize(commands::DequantizeArgs),
    /// Run an error-analysis experiment and emit CSV
    #[command(subcommand)]
    Analyze(analyze::Analyze),
}

/// Invalid invocation detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use mfp_core::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidArgument(_) | E::InvalidTransform(_) => 2,
                E::Cholesky { .. } | E::Singular { .. } | E::InvalidScale(_) => 4,
                _ => 3,
            };
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Quantize(a) => commands::quantize(a),
        Command::Dequantize(a) => commands::dequantize(a),
        Command::Analyze(a) => analyze::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
