//! Core library: Fourier analysis of how small decoder-only transformers
//! represent and compute integer arithmetic over a single-token number
//! vocabulary, plus the training, lens, filtering, and ablation machinery
//! needed to probe it.

pub mod ablation;
pub mod checkpoint;
pub mod dataset;
pub mod embed;
pub mod error;
pub mod filters;
pub mod fourier;
pub mod lens;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod stats;

pub use error::{CoreError, Result};
pub use scalar::Scalar;

/// f64 basis used by every analysis path.
pub type Basis64 = fourier::FourierBasis<f64>;
/// f32 basis for callers that stay in training precision.
pub type Basis32 = fourier::FourierBasis<f32>;
/// Training-precision model.
pub type Model32 = model::ModelState<f32>;
/// Analysis-precision model (checkpoints re-read widened).
pub type Model64 = model::ModelState<f64>;
