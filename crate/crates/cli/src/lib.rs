//! Experiment runner behind the `aj` binary: training runs, oracle checks
//! and sampling from trained reconstructors.

use std::fmt;

pub mod checkpoint;
pub mod config;
pub mod pgm;
pub mod run;

pub use config::ExperimentConfig;

/// Failures mapped onto stable process exit codes.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
    Degenerate(String),
    Checkpoint(String),
    Io(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Degenerate(_) => 5,
            CliError::Checkpoint(_) => 6,
            CliError::Io(_) | CliError::Internal(_) => 1,
        }
    }

    /// Classifies a core error raised outside data loading.
    pub fn from_core(e: aj_core::Error) -> Self {
        use aj_core::Error as E;
        if e.is_numeric() {
            return CliError::Numeric(e.to_string());
        }
        match e {
            E::Config(_) => CliError::Config(e.to_string()),
            E::DegenerateGame(_) => CliError::Degenerate(e.to_string()),
            E::Io(_) => CliError::Io(e.to_string()),
            E::AtStep { ref source, .. } if matches!(**source, E::Config(_)) => CliError::Config(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Degenerate(m) => write!(f, "{m}"),
            CliError::Checkpoint(m) => write!(f, "checkpoint error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
            CliError::Internal(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}
