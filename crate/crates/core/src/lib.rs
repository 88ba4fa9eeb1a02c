//! Frame-level affect prediction from pre-extracted visual features.
//!
//! A per-frame feature sequence is embedded with a 1-D temporal convolution,
//! summed with a sinusoidal positional encoding, and passed through a stack of
//! self-attention encoder blocks. Three heads predict, per frame: a bounded
//! valence/arousal pair, 8 expression logits, and 12 action-unit logits.
//! Everything runs on a small f64 tensor tape with reverse-mode autodiff, so
//! training is exactly reproducible from a seed.

pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

/// Number of expression classes (six basic expressions plus neutral and other).
pub const EXPR_CLASSES: usize = 8;

/// Number of action units predicted per frame.
pub const AU_UNITS: usize = 12;

/// Expression class names in label order.
pub const EXPR_NAMES: [&str; EXPR_CLASSES] = [
    "neutral",
    "anger",
    "disgust",
    "fear",
    "happiness",
    "sadness",
    "surprise",
    "other",
];
