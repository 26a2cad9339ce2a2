//! Desk-scale study of layer-wise merging of transformer hidden
//! embeddings for spoofing countermeasures.
//!
//! The crate provides a deterministic f64 tensor core with tape-based
//! reverse-mode differentiation, a toy transformer encoder producing
//! per-layer embedding stacks, attentive and linear layer-merging blocks,
//! recurrent and attentive-statistics-pooling classifier heads, a staged
//! fine-tuning trainer, equal-error-rate evaluation, and bit-exact file
//! formats for embedding stacks, parameters, and score/key files.

// index-based loops are the house style for the numeric kernels
#![allow(clippy::needless_range_loop)]

pub mod attm;
pub mod dataio;
pub mod encoder;
pub mod eval;
pub mod heads;
pub mod linm;
pub mod model;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use tensor::{Tensor, TensorError};
