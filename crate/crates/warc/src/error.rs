use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WarcError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    /// The record violates an invariant; nothing was written.
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("corrupt record at offset {offset}: {reason}")]
    CorruptRecord { offset: u64, reason: String },
}

impl WarcError {
    pub(crate) fn corrupt(offset: u64, reason: impl Into<String>) -> Self {
        WarcError::CorruptRecord {
            offset,
            reason: reason.into(),
        }
    }
}
