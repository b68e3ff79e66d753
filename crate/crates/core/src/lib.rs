//! Differentiable simulation and training of diffractive optical networks.
//!
//! A coherent input field is propagated through a stack of trainable
//! diffractive layers with the angular spectrum method. Layer transmissions are
//! optimized by reverse-mode gradients and Adam, either as an all-optical
//! classifier read out by class detectors or jointly with a small electronic
//! network behind a pixelated sensor.

pub mod checkpoint;
pub mod dataset;
pub mod detection;
pub mod electronic;
pub mod error;
pub mod optics;
pub mod hybrid;
pub mod layer;
pub mod metrics;
pub mod propagation;
pub mod training;

pub use error::{D2nnError, Result};
pub use optics::{ComplexField, GridSpec, InputEncoding};
