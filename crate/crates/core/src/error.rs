//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, SvsError>;

#[derive(Debug, Error)]
pub enum SvsError {
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },

    #[error("depth must be positive (got {z})")]
    InvalidDepth { z: f64 },

    #[error("invalid camera: {reason}")]
    InvalidCamera { reason: String },

    #[error("sphere cloud is empty")]
    EmptyCloud,

    #[error("sampling fraction must lie in (0, 1] (got {fraction})")]
    InvalidFraction { fraction: f64 },

    #[error("invalid radius: {reason}")]
    InvalidRadius { reason: String },

    #[error("invalid render settings: {reason}")]
    InvalidSettings { reason: String },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("mask selects no pixels")]
    EmptyMask,

    #[error("views share no valid overlap")]
    EmptyOverlap,

    #[error("value {value} outside [0, 1]")]
    OutOfRange { value: f64 },

    #[error("no valid pixels to fill from")]
    AllInvalid,

    #[error("loss diverged at step {step}")]
    NumericalDivergence {
        step: usize,
        trace: crate::optim::FitTrace,
    },

    #[error("invalid scene: {reason}")]
    InvalidScene { reason: String },

    #[error("malformed {format} data: {reason}")]
    Decode { format: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl SvsError {
    pub(crate) fn shape(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        SvsError::ShapeMismatch {
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}
