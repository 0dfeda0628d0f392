//! Command surface of `ulasan`: dataset statistics, cleaning, training,
//! evaluation, comparison, prediction and an HTTP predictor.

pub mod args;
pub mod commands;
pub mod config;
pub mod predict;
pub mod serve;

use std::io::Write;
use std::net::SocketAddr;

use anyhow::Result;

use args::{Cli, Command};

/// A command-line mistake rather than a runtime failure.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<UsageError>()) {
        EXIT_USAGE
    } else {
        EXIT_RUNTIME
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Stats(a) => commands::stats(&a, out),
        Command::Prep(a) => commands::prep(&a, out),
        Command::Train(a) => commands::train(&a, out).map(|_| ()),
        Command::Evaluate(a) => commands::evaluate(&a, out),
        Command::Compare(a) => commands::compare(&a, out),
        Command::Predict(a) => commands::predict(&a, out),
        Command::Serve(a) => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve::serve(a.model, SocketAddr::new(a.host, a.port)))
        }
    }
}
