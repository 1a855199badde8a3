//! The `twotime` command line. [`execute`] runs one invocation and returns its
//! exit code and output, so tests can drive it without a subprocess.
//!
//! Exit codes: 0 success, 1 IO or parse error, 2 assumption or tolerance
//! failure (including divergence), 3 internal inconsistency.

pub mod args;
pub mod commands;

use std::ffi::OsString;

use clap::Parser;
use twotime_core::Error;

use crate::args::{Cli, Command};

/// Result of one invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// An error already mapped to its exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::new(exit_code(&e), e.to_string())
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Dimension(_)
        | Error::NonFinite
        | Error::NotSymmetric
        | Error::InvalidArgument(_)
        | Error::InsufficientSamples { .. } => 1,
        Error::SingularPencil | Error::EigenNoConvergence => 3,
        Error::InvalidSchedule(_)
        | Error::DivergentRatio { .. }
        | Error::NotPsd { .. }
        | Error::SingularA22 { .. }
        | Error::SingularSystem
        | Error::SingularDelta
        | Error::NotHurwitz(_)
        | Error::AssumptionViolation(_)
        | Error::SingularStep { .. }
        | Error::Diverged { .. }
        | Error::ReplicaDiverged { .. }
        | Error::SingularPrediction => 2,
    }
}

pub fn execute<I, T>(argv: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                Outcome { code: 1, stdout: String::new(), stderr: text }
            } else {
                Outcome { code: 0, stdout: text, stderr: String::new() }
            };
        }
    };
    let result = match &cli.command {
        Command::Validate(a) => commands::validate(a),
        Command::Predict(a) => commands::predict(a),
        Command::Run(a) => commands::run(a),
        Command::Averaging(a) => commands::averaging(a),
        Command::Gain(a) => commands::gain(a),
    };
    result.unwrap_or_else(|f| Outcome { code: f.code, stdout: String::new(), stderr: format!("error: {}\n", f.message) })
}
