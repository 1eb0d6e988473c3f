//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any operation in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors or frames disagree on shape.
    #[error("dimension mismatch in {op}: left is {left:?}, right is {right:?}")]
    DimMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    /// A configuration value is outside its allowed range.
    #[error("invalid config: {0}")]
    Config(String),

    /// Data fails a construction invariant (non-finite, out of range, wrong length).
    #[error("invalid data: {0}")]
    Data(String),

    /// A constrained random generation procedure exhausted its retry budget.
    #[error("generation failed: {0}")]
    Generation(String),

    /// File does not start with the expected magic bytes.
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    /// Container version is not supported by this build.
    #[error("unsupported container version {found} (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },

    /// File ended before the payload promised by its header.
    #[error("truncated file: {0}")]
    Truncated(String),

    /// Header metadata and payload disagree.
    #[error("container integrity error: {0}")]
    Integrity(String),

    /// Malformed image or text format.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
