use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not Hermitian (deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix is not symmetric (deviation {deviation:e})")]
    NotSymmetric { deviation: f64 },

    #[error("correlation matrix has eigenvalue {eigenvalue:e}, below the PSD floor")]
    NumericalDegeneracy { eigenvalue: f64 },

    #[error("not a density matrix: {0}")]
    InvalidState(String),

    #[error("feature {name} is required but masked out")]
    MissingFeature { name: &'static str },

    #[error("class {class} has no records; cannot equalize")]
    CannotEqualize { class: &'static str },

    #[error("need at least {needed} records, got {got}")]
    TooFewRecords { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sequence lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("training diverged at epoch {epoch}: {what}")]
    Divergence { epoch: usize, what: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
