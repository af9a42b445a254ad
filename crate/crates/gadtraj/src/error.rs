//! Error types shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Errors from tensor arithmetic and the gradient tape.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: left {left:?}, right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{0}")]
    Contract(String),
}

/// Errors from dataset construction, ingestion and preprocessing.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing required column '{column}' in {path}")]
    MissingColumn { column: String, path: PathBuf },
    #[error("row {row}: cannot parse '{value}' in column '{column}' as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("duplicate sequence step {step} for person '{person}'")]
    DuplicateStep { person: String, step: usize },
    #[error("conflicting labels for person '{person}': {a} vs {b}")]
    ConflictingLabel { person: String, a: u8, b: u8 },
    #[error("person '{person}': sequence steps must start at 0 and strictly increase")]
    BadStepOrder { person: String },
    #[error("person '{person}': a trajectory needs at least two points, got {got}")]
    TooShort { person: String, got: usize },
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Errors from model configuration and checkpoint handling.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input feature dim {got} does not match model dim {expected}")]
    FeatureDim { got: usize, expected: usize },
    #[error("all positions of a group are masked; cannot pool")]
    AllMasked,
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("checkpoint config does not match the requested config: {0}")]
    ConfigMismatch(String),
    #[error("failed to write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Errors raised by the training loop.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("failed to write training artifact {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Errors from evaluation metrics.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scores and labels have different lengths: {scores} vs {labels}")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("{metric} is undefined: {reason}")]
    Undefined {
        metric: &'static str,
        reason: String,
    },
}
