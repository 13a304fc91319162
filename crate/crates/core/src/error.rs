use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box [{x1}, {y1}, {x2}, {y2}]: {reason}")]
    InvalidBox {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        reason: &'static str,
    },

    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),

    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid score {value} for {field}: must lie in [0, 1]")]
    InvalidScore { field: &'static str, value: f64 },

    #[error("no candidates in gallery image `{0}`")]
    NoCandidates(String),

    #[error("invalid weight matrix: {0}")]
    InvalidWeights(String),

    #[error("edge ({row}, {col}) out of range for a {rows}x{cols} weight matrix")]
    EdgeOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("undefined confidence: matching has no edges")]
    UndefinedConfidence,

    #[error("brute-force matching limited to min(rows, cols) <= {limit}, got {got}")]
    InstanceTooLarge { limit: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dataset validation failed: {0}")]
    Validation(String),

    #[error("infeasible synthetic layout: {0}")]
    InfeasibleLayout(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, action: &str, source: std::io::Error) -> Self {
        Error::Io {
            context: format!("{action} {}", PathBuf::from(path).display()),
            source,
        }
    }
}
