//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor or track shapes. Carries both shapes so the
    /// message pinpoints the mismatch.
    #[error("dimension mismatch in {context}: {lhs:?} vs {rhs:?}")]
    Dimension {
        context: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Invalid configuration value (even conv kernel, indivisible d_m, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// API contract violation (e.g. backward on a non-scalar node).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Window longer than the configured maximum.
    #[error("window length {len} exceeds max_T {max_t}")]
    Window { len: usize, max_t: usize },

    /// Malformed binary or text file. `offset` is the byte position at which
    /// parsing failed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Invalid data value; `frame` identifies the offending frame.
    #[error("data error at frame {frame}: {message}")]
    Data { frame: u64, message: String },

    /// Two feature streams disagree on frame ids.
    #[error("stream alignment error: first mismatching frame at row {row}")]
    Alignment { row: usize },

    /// Metric requested over an empty or degenerate input.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// Batch cannot contribute to training (too few valid frames); callers
    /// count these and move on.
    #[error("skip batch: {0}")]
    SkipBatch(String),

    /// Non-finite gradient detected; aborts the optimization step.
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dimension(context: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            context,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub fn data(frame: u64, message: impl Into<String>) -> Self {
        Error::Data {
            frame,
            message: message.into(),
        }
    }
}
