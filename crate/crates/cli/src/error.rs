use std::process::ExitCode;

use eqprop::Error;

/// Failure classes of the command-line tool, one exit code each.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("relaxation failed: {0}")]
    Relaxation(String),
    #[error("tolerance violated: {0}")]
    Tolerance(String),
    #[error("network has {params} weights, above the cap of {cap}")]
    CapExceeded { params: usize, cap: usize },
    #[error("exact computation refused: {0}")]
    Refused(String),
    #[error("output: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 2,
            CliError::Dataset(_) => 3,
            CliError::Relaxation(_) => 4,
            CliError::Tolerance(_) => 5,
            CliError::CapExceeded { .. } => 6,
            CliError::Refused(_) => 7,
            CliError::Output(_) => 8,
        })
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let text = e.to_string();
        match e.root() {
            Error::Divergence { .. } | Error::NonConvergence { .. } => CliError::Relaxation(text),
            Error::Saturated { .. } | Error::SingularJacobian { .. } => CliError::Refused(text),
            Error::Idx(_) | Error::Dataset(_) => CliError::Dataset(text),
            _ => CliError::Config(text),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Output(e.to_string())
    }
}
