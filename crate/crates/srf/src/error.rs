//! Error types shared across the crate.
//!
//! Errors fall into four classes, and the CLI maps each class to a fixed
//! process exit code: usage problems are handled by the argument parser
//! (exit 2), [`Error::exit_code`] maps domain violations to 3 and anything
//! involving the filesystem or malformed files to 4.

use std::io;

use crate::math::Vec3;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on values (shapes, ranges, masks, weights) was violated.
    #[error("domain error: {0}")]
    Domain(String),

    /// A query point fell outside the field's bounding box.
    #[error("out of domain: point ({}, {}, {}) is outside the grid bounds", .0.x, .0.y, .0.z)]
    OutOfBounds(Vec3),

    /// An input that must be finite contained a NaN or infinity.
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    /// A configurable resource cap (memory, element count) would be exceeded.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// Internal state was used out of order (e.g. stale forward state).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The configuration file is structurally or semantically invalid.
    #[error("config error: {0}")]
    Config(String),

    /// A binary artifact could not be decoded.
    #[error("parse error: {0}")]
    Parse(#[from] ParseError),

    /// An underlying filesystem operation failed.
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Decoding failures for the binary artifact formats (checkpoints, tensors,
/// images). Each failure mode is a distinct variant so callers and tests can
/// tell them apart.
#[derive(Debug, thiserror::Error)]
pub enum ParseError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("truncated file: {context}")]
    Truncated { context: String },

    #[error("section {tag}: declared length {declared} exceeds remaining {remaining} bytes")]
    SectionOverrun { tag: u32, declared: u64, remaining: u64 },

    #[error("section {tag}: {reason}")]
    BadSection { tag: u32, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("value out of range: {0}")]
    ValueOutOfRange(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("required section missing: {0}")]
    MissingSection(&'static str),
}

impl Error {
    /// Process exit code the CLI uses for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_)
            | Error::OutOfBounds(_)
            | Error::NonFinite(_)
            | Error::Resource(_)
            | Error::Contract(_)
            | Error::Config(_) => 3,
            Error::Parse(_) | Error::Io(_) => 4,
        }
    }

    /// Shorthand for a [`Error::Domain`] with a formatted message.
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
