//! Classification of two-qubit quantum correlations from collective
//! measurements.
//!
//! The pipeline: random states ([`states`]) are labelled into five nested
//! correlation classes ([`correlations`]), measured collectively in the
//! entanglement-swapping geometry ([`collective`]), balanced and split
//! ([`dataset`]), and classified by a batch-normalized MLP ([`ann`]) whose
//! performance is scored per class ([`metrics`]) as features are removed
//! ([`sweep`]).

pub mod ann;
pub mod collective;
pub mod correlations;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod qmath;
pub mod selfcheck;
pub mod states;
pub mod sweep;

pub use correlations::ClassLabel;
pub use error::{Error, Result};
pub use states::DensityMatrix;
