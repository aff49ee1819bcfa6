//! Sign-language gesture recognition from landmark keypoint sequences.
//!
//! The crate covers the whole offline and online path: landmark file I/O,
//! per-frame normalization and Kalman smoothing, a CNN-BiLSTM classifier
//! built on a small tensor engine with analytic gradients, the training and
//! evaluation harness, a synthetic gesture generator, and the sliding-window
//! streaming session used by the server.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod keypoint;
pub mod model;
pub mod nn;
pub mod preprocess;
pub mod rng;
pub mod serve;
pub mod synth;
pub mod tensor;
pub mod train;

pub use keypoint::{DatasetManifest, GestureSequence, KeypointError, KeypointFrame, LayoutSpec};
pub use tensor::{DType, Element, ShapeError, Tensor};
