//! Scribble-supervised binary segmentation.
//!
//! A small encoder–decoder is trained from sparse foreground/background
//! strokes with partial binary cross-entropy plus one consistency alignment
//! per step, chosen at random among scale consistency, local–global
//! consistency and multi-level affinity propagation. A trained model can
//! then pseudo-label the training images once and a fresh model is trained
//! on those labels.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below name the common instantiations.

pub mod affinity;
pub mod autograd;
pub mod dataio;
mod error;
pub mod gradcheck;
pub mod kernels;
pub mod losses;
pub mod metrics;
pub mod model;
mod scalar;
pub mod selftrain;
mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = model::SegmentationModel<f32>;
pub type Model64 = model::SegmentationModel<f64>;
pub type Graph32 = autograd::Graph<f32>;
pub type Graph64 = autograd::Graph<f64>;
pub type Prediction32 = model::Prediction<f32>;
pub type Prediction64 = model::Prediction<f64>;
