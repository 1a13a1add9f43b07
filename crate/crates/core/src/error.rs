use thiserror::Error;

/// Errors surfaced by the learners, the stream readers and the harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed data of the wrong shape or an out-of-range label.
    #[error("invalid input: {0}")]
    Input(String),

    /// A configuration value violates its documented constraints.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The operation needs state that is not there (empty buffer, empty memory).
    #[error("invalid state: {0}")]
    State(String),

    /// A data file could not be ingested.
    #[error("ingestion error at row {row}: {msg}")]
    Ingest { row: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
