//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum UpsError {
    /// A log-density evaluated to NaN or +inf at a sampled point.
    #[error("non-finite log-density ({value}) at a sampled point")]
    NonFiniteDensity { value: f64 },

    /// A rejection loop exceeded its safety cap.
    #[error("rejection sampling exceeded {cap} iterations")]
    RejectionCap { cap: usize },

    /// Coupled chains failed to meet within the iteration budget.
    /// Carries the number of coupled transitions that were performed.
    #[error("chains did not meet within {max_iterations} iterations")]
    NoMeeting {
        max_iterations: usize,
        partial_x: Vec<Vec<f64>>,
        partial_y: Vec<Vec<f64>>,
    },

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate lambda proposal: {0}")]
    DegenerateProposal(String),

    #[error("optimization did not converge: {0}")]
    NonConvergence(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("while handling lambda = {lambda}: {source}")]
    AtLambda {
        lambda: f64,
        #[source]
        source: Box<UpsError>,
    },

    #[error("i/o failure: {0}")]
    Io(String),

    #[error("serialization failure: {0}")]
    Serde(#[from] serde_json::Error),
}

impl UpsError {
    pub fn at_lambda(self, lambda: f64) -> UpsError {
        UpsError::AtLambda {
            lambda,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, UpsError>;
