//! Tiny quantized 1D convolutional networks for time-series classification.

pub mod cli;
pub mod adaptive;
pub mod data;
pub mod driver;
pub mod engine;
pub mod error;
pub mod format;
pub mod layers;
pub mod model;
pub mod nas;
pub mod quantize;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
