//! Failure classes with stable exit codes: configuration problems exit with
//! code 2, numerical failures with code 3.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config files, paths, or input data; exit code 2.
    Config(String),
    /// The computation itself failed (divergence, degenerate weights,
    /// rejection budget, indefinite matrices, ...); exit code 3.
    Numerical(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "invalid configuration: {msg}"),
            CliError::Numerical(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<margscore::Error> for CliError {
    fn from(e: margscore::Error) -> Self {
        use margscore::Error as E;
        match &e {
            E::NonFinite(_)
            | E::DegenerateWeights
            | E::RejectionBudget { .. }
            | E::NotPositiveDefinite
            | E::NoStableThreshold { .. }
            | E::DensityUnreachable { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}
