use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("retraction step too large: |x + dt v| = {norm:e}")]
    StepTooLarge { norm: f64 },

    #[error("kernel exponent {exponent} exceeds the overflow guard")]
    Overflow { exponent: f64 },

    #[error("atoms {first} and {second} coincide (distance {distance:e}); merge them first")]
    CoincidentAtoms {
        first: usize,
        second: usize,
        distance: f64,
    },

    #[error("cluster report threshold {found} does not match the expected scale {expected}")]
    ScaleMismatch { expected: f64, found: f64 },

    #[error("not applicable: {0}")]
    Inapplicable(String),

    #[error("argument out of range: {0}")]
    Range(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
