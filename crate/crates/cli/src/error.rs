use std::fmt;

use tof_core::construction::ConstructionError;
use tof_core::evaluation::EvalError;
use tof_core::merge::MergeError;
use tof_core::oracle::OracleError;

/// Failure of a subcommand, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag combinations (exit 1).
    Usage(String),
    /// Unreadable or invalid input data (exit 2).
    Data(String),
    /// Oracle backend failure (exit 3).
    Backend(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Backend(_) => 3,
        }
    }

    pub fn data(context: impl fmt::Display, err: impl fmt::Display) -> Self {
        CliError::Data(format!("{context}: {err}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Backend(m) => write!(f, "backend error: {m}"),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::Backend(e.to_string())
    }
}

impl From<ConstructionError> for CliError {
    fn from(e: ConstructionError) -> Self {
        match e {
            ConstructionError::Oracle { .. } => CliError::Backend(e.to_string()),
            other => CliError::data("construction", other),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Oracle { .. } => CliError::Backend(e.to_string()),
            other => CliError::data("evaluation", other),
        }
    }
}

impl From<MergeError> for CliError {
    fn from(e: MergeError) -> Self {
        match e {
            MergeError::Oracle(_) => CliError::Backend(e.to_string()),
            other => CliError::data("merge", other),
        }
    }
}
