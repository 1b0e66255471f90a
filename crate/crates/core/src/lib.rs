//! Multi-task wound image classification: a reverse-mode autodiff engine,
//! the attention-branch network, data pipeline, evaluation statistics and
//! an HTTP inference service.

pub mod autodiff;
pub mod data;
pub mod model;
pub mod service;
pub mod stats;
pub mod tensor;

pub use tensor::{NdArray, TensorError};
