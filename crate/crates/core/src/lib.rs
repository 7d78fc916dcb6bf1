//! Differentiable clothed-avatar pipeline on CPU.
//!
//! The crate is organized around a small tape-based reverse-mode autodiff
//! engine ([`graph`]) over dense row-major tensors ([`tensor`]). Everything
//! numeric is generic over the scalar type via [`scalar::Real`]; the
//! [`Scalar`] alias picks the default precision used by the trainer and the
//! gradient-check suite.
//!
//! Pipeline stages:
//! - [`body`]: procedural skinned body, subdivision, linear blend skinning,
//!   vertex normals, camera geometry.
//! - [`codec`]: latent code -> triplane -> per-vertex features -> static
//!   Gaussian avatar.
//! - [`cloth`]: pose-window encoding, graph convolution over the garment,
//!   recurrent rollout emitting per-frame Gaussian residuals.
//! - [`render`]: differentiable splat rasterizer producing RGB, normal,
//!   depth and silhouette images.
//! - [`parts`]: semantic decomposition of the Gaussian set and clothing
//!   transfer between avatars.
//! - [`loss`]: training objectives; [`metrics`]: evaluation metrics.
//! - [`gradcheck`]: finite-difference verification of every backward pass.

pub mod body;
pub mod cloth;
pub mod codec;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod img;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod parts;
pub mod render;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Real;
pub use tensor::Tensor;

/// Default scalar for training, evaluation and the gradient-check suite.
pub type Scalar = f64;

/// Tensor with the default scalar.
pub type TensorS = Tensor<Scalar>;

/// Autodiff graph with the default scalar.
pub type GraphS = graph::Graph<Scalar>;
