//! Group-wise autoregressive transformer entropy model for learned compression.
//!
//! A quantized latent tensor is split into spatial-channel groups, each group's
//! Gaussian parameters are predicted from previously decoded groups by a stack
//! of cross-group and inner-group attention mixers, and the mean-subtracted
//! symbols are range coded. Decoding reuses cached key/value projections so each
//! autoregressive step only runs one group through the network.
//!
//! Module map:
//!
//! * [`numerics`]: dense f32 kernels with multiply-accumulate counting.
//! * [`grouping`]: the group partition and its inverse.
//! * [`model`]: configuration, weights and the mixer stack.
//! * [`cache`]: incremental inference over cached keys and values.
//! * [`entropy`]: discretized Gaussians, quantized CDFs and the range coder.
//! * [`codec`]: end-to-end latent encode/decode and progressive sampling.
//! * [`complexity`]: analytic attention cost models and measurements.
//! * [`weights_io`]: the binary weight container.

pub mod cache;
pub mod codec;
pub mod complexity;
pub mod entropy;
mod error;
pub mod exec;
pub mod grouping;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod selftest;
pub mod weights_io;

pub use error::{Error, Result};
