use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the restoration library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Unreadable or unsupported image content (bad header, wrong bit
    /// depth, unexpected color layout).
    #[error("{path}: {reason}")]
    UnsupportedImage { path: PathBuf, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A pixel mask that keeps nothing cannot be inverted.
    #[error("mask keeps no pixels")]
    EmptyMask,

    /// The search window around a reference block holds fewer candidate
    /// blocks than the requested group size.
    #[error("search window holds {found} candidate blocks, need {needed}")]
    TooFewCandidates { found: usize, needed: usize },

    /// The solver produced NaN or infinity; names the offending buffer
    /// and the iteration at which it was detected.
    #[error("non-finite values in buffer `{buffer}` at iteration {iteration}")]
    NonFinite {
        buffer: &'static str,
        iteration: usize,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
