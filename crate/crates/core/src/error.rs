use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the explanation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    UnsupportedChannels(usize),

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("malformed model graph: {0}")]
    MalformedGraph(String),

    #[error("unsupported operator `{0}`")]
    UnsupportedOperator(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-positive score {value} in record `{id}`")]
    NonPositiveScore { id: String, value: f64 },

    #[error("singular value decomposition did not converge")]
    SvdNoConvergence,

    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
