//! Library side of the `hopfield-lab` binary: configs, flag merging and the
//! subcommand runners.
//!
//! Exit codes: 0 ok, 1 other failure, 2 usage or I/O, 3 critical point,
//! 4 conditioning starvation, 5 singular regression matrix, 6 every point
//! of a rate study noise-dominated.

pub mod args;
pub mod commands;
pub mod config;

use std::path::Path;

use hopfield_core::Error;

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_CRITICAL: u8 = 3;
pub const EXIT_STARVATION: u8 = 4;
pub const EXIT_SINGULAR: u8 = 5;
pub const EXIT_NOISE: u8 = 6;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Usage(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) => match e {
                Error::InvalidParams(_)
                | Error::DimensionMismatch { .. }
                | Error::IndexOutOfRange { .. }
                | Error::EnumerationTooLarge { .. }
                | Error::TooFewDraws { .. }
                | Error::TooFewPoints { .. }
                | Error::Parse(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_) => EXIT_USAGE,
                Error::CriticalPoint => EXIT_CRITICAL,
                Error::ConditioningStarvation { .. } => EXIT_STARVATION,
                Error::SingularLambda { .. } => EXIT_SINGULAR,
                Error::NoiseDominated => EXIT_NOISE,
                _ => EXIT_OTHER,
            },
        }
    }
}
