//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed PGM/PPM data. `offset` is the byte position of the problem.
    #[error("image format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    /// A caller-supplied value violates an operation's contract.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Tensor or image dimensions are inconsistent.
    #[error("shape error: {0}")]
    Shape(String),

    /// A stitch target pixel is covered by no patch.
    #[error("pixel ({x}, {y}) is not covered by any patch")]
    Coverage { x: usize, y: usize },

    /// Training aborted (non-finite loss, bad data, ...).
    #[error("training failed at step {step}: {reason}")]
    Training { step: usize, reason: String },

    /// A gradient block contains NaN or infinity.
    #[error("non-finite gradient in parameter block {block}")]
    NonFiniteGrad { block: String },

    /// A metric has no defined value for these inputs.
    #[error("metric undefined: {0}")]
    Undefined(String),

    /// A corpus entry on disk could not be used.
    #[error("corpus entry {path}: {reason}")]
    Corpus { path: String, reason: String },

    /// Malformed model file. `offset` is the byte position of the problem.
    #[error("model file error at byte {offset}: {reason}")]
    Model { offset: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
