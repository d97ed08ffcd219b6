//! Crate-wide error type.

use crate::energy::EnergyRecord;

/// Errors surfaced by gateway operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration (bad profile, bad threshold, missing section).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input outside an operation's domain (empty chain, non-positive baseline, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller misuse of a CLI/offline operation (empty workload, unlabeled rows).
    #[error("usage error: {0}")]
    Usage(String),

    /// Append attempted after the ledger was closed. Carries the record for retry.
    #[error("ledger is closed")]
    LedgerClosed { record: Box<EnergyRecord> },

    /// Ledger storage failure. Carries the record that failed to persist, when any.
    #[error("ledger I/O failure: {source}")]
    LedgerIo {
        source: std::io::Error,
        record: Option<Box<EnergyRecord>>,
    },

    #[error(transparent)]
    Backend(#[from] crate::backend::BackendError),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
