use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid record at line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("normalization error: {0}")]
    Normalization(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numerical failure: {0}")]
    Numerics(String),
    #[error("baseline error: {0}")]
    Baseline(String),
    #[error("empty slice: {0}")]
    EmptySlice(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("graph hash mismatch: checkpoint expects {expected}, graphs have {found}")]
    GraphMismatch { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
