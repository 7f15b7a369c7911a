//! Per-anchor positive-unlabeled clone detection.
//!
//! A small convolutional encoder is trained from scratch for every anchor
//! image: augmented views of the anchor act as positives, a random sample of
//! the rest of the corpus acts as an unlabeled background. Images whose latent
//! ℓ2 norm falls at or below `τ = μ + m` are reported as clones of the anchor.

pub mod augment;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod pu_objective;
pub mod rng;
pub mod service_api;
pub mod tensor_nn;
pub mod trainer;

pub use error::{Error, Result};

/// Side length of the square RGB images the encoder consumes.
pub const IMAGE_SIDE: usize = 32;
/// Number of colour channels.
pub const CHANNELS: usize = 3;
/// Scalars per normalized image (3×32×32).
pub const IMAGE_LEN: usize = CHANNELS * IMAGE_SIDE * IMAGE_SIDE;
