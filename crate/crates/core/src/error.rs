use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("group size must be at least 2, got {0}")]
    GroupTooSmall(usize),

    #[error("probability vector sums to {sum}, expected 1 within {tol}")]
    NotNormalized { sum: f64, tol: f64 },

    #[error("negative or non-finite probability {value} at index {index}")]
    InvalidProbability { index: usize, value: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("non-finite gradient while updating on instance {instance_id}")]
    NonFiniteGradient { instance_id: String },

    #[error("non-finite loss in batch {batch_index}")]
    NonFiniteLoss { batch_index: usize },

    #[error("unknown task kind `{0}`")]
    UnknownKind(String),

    #[error("label `{label}` is not in the {kind} vocabulary")]
    LabelOutsideVocabulary { kind: String, label: String },

    #[error("record `{id}`: {reason}")]
    BadRecord { id: String, reason: String },

    #[error("model `{0}` has no arena entries")]
    UnknownModel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("checkpoint parse error at line {line}: {reason}")]
    Checkpoint { line: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<LabError>,
    },
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end: 2 for bad
    /// configuration, 3 for anything that failed while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::UnknownKind(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
