//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes or sizes.
    #[error("dimension error: {0}")]
    Dim(String),

    /// An API contract was violated (e.g. backward on a non-scalar).
    #[error("contract error: {0}")]
    Contract(String),

    /// Malformed audio container; names the offending chunk.
    #[error("parse error in chunk '{chunk}': {reason}")]
    WavParse { chunk: String, reason: String },

    /// Invalid input data (labels out of range, empty clips, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Invalid configuration value.
    #[error("configuration error: {0}")]
    Config(String),

    /// A metric is undefined for the given data.
    #[error("metric error: {0}")]
    Metric(String),

    /// A referenced data file is missing or unreadable.
    #[error("ingestion error: {0}")]
    Ingest(String),

    /// Malformed binary artifact (feature cache, checkpoint).
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable one-word category, used by the CLI for machine-parsable output.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dim(_) => "dimension",
            Error::Contract(_) => "contract",
            Error::WavParse { .. } => "parse",
            Error::Input(_) => "input",
            Error::Config(_) => "config",
            Error::Metric(_) => "metric",
            Error::Ingest(_) => "ingestion",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
