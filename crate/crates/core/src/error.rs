use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HireError {
    #[error("key {0:#x} already carries the tombstone flag")]
    AlreadyMasked(u64),
    #[error("key {0:#x} is outside the 63-bit key domain")]
    OutOfDomain(u64),
    #[error("input keys are not strictly increasing at position {index}")]
    NotSorted { index: usize },
    #[error("fitter received key {key} after {last}; keys must strictly increase")]
    NonIncreasingKey { key: u64, last: u64 },
    #[error("range bounds are inverted: lo={lo} > hi={hi}")]
    InvertedRange { lo: u64, hi: u64 },
    #[error("leaf buffer is full ({capacity} entries) and no recalibration engine is attached")]
    BufferFull { capacity: usize },
    #[error("internal node log is full ({capacity} entries)")]
    LogFull { capacity: usize },
    #[error("separator {0} not present in internal node")]
    MissingSeparator(u64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

pub type Result<T> = std::result::Result<T, HireError>;
