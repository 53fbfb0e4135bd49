//! Model-compression workbench: train small CNNs, prune and quantize them,
//! and score every combination by gzipped size and accuracy.

pub mod datasets;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pruning;
pub mod quantization;
pub mod sizing;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
