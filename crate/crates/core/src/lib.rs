//! Cross-attention layers for extractive question answering.
//!
//! Four interchangeable attention mechanisms (BiDAF, dynamic co-attention,
//! their hybrid, and double cross attention) sit between a shared
//! word + char-CNN + biGRU encoder and an independent start/end span head.
//! Everything runs on the small reverse-mode autodiff engine in [`tensor`],
//! generic over the scalar type; the aliases below fix it to `f64`, which is
//! what training, checkpoints and gradient checks use.

pub mod attention;
pub mod data;
pub mod encoder;
mod error;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod rnn;
mod scalar;
pub mod span;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use scalar::Real;

/// Default scalar.
pub type Float = f64;
pub type Tensor = tensor::Tensor<Float>;
pub type Graph = tensor::Graph<Float>;
pub type ParamStore = params::ParamStore<Float>;
pub type Vocab = data::Vocab<Float>;
