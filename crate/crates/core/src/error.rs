use std::fmt;

use thiserror::Error;

/// Which relaxation phase an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Free,
    Nudged,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Free => f.write_str("free phase"),
            Phase::Nudged => f.write_str("nudged phase"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch { what: &'static str, expected: usize, got: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),

    #[error("expected {expected} learning rates (one per connection layer), got {got}")]
    AlphaCountMismatch { expected: usize, got: usize },

    #[error("state became non-finite at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("relaxation did not converge: residual {residual:.3e} above tolerance {tol:.3e}")]
    NonConvergence { residual: f64, tol: f64 },

    #[error("fixed point has {count} saturated or kink-bound units; derivatives are undefined there")]
    Saturated { count: usize },

    #[error("state Jacobian is singular or ill-conditioned (condition estimate {condition:.3e})")]
    SingularJacobian { condition: f64 },

    #[error("influence parameter beta must be nonzero here")]
    ZeroBeta,

    #[error("phase-2 trajectory is missing or too short ({len} states)")]
    TrajectoryTooShort { len: usize },

    #[error("{phase}: {source}")]
    InPhase {
        phase: Phase,
        #[source]
        source: Box<Error>,
    },

    #[error("example {index}: {source}")]
    AtExample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parameter coordinate {index}: {source}")]
    AtCoordinate {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Idx(#[from] crate::mnist::IdxError),

    #[error("dataset: {0}")]
    Dataset(String),
}

impl Error {
    pub(crate) fn in_phase(self, phase: Phase) -> Self {
        Error::InPhase { phase, source: Box::new(self) }
    }

    pub(crate) fn at_example(self, index: usize) -> Self {
        Error::AtExample { index, source: Box::new(self) }
    }

    pub(crate) fn at_coordinate(self, index: usize) -> Self {
        Error::AtCoordinate { index, source: Box::new(self) }
    }

    /// Strips phase/example/coordinate wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::InPhase { source, .. } | Error::AtExample { source, .. } | Error::AtCoordinate { source, .. } => {
                source.root()
            }
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
