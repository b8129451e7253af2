//! Mixture-of-mixups regularization for multi-label, long-tailed classification.
//!
//! The crate is split along the training pipeline:
//!
//! - [`mixops`]: Mixup, Manifold Mixup and MultiMix operators, their
//!   coefficient samplers, loss-level target mixing and the per-iteration
//!   strategy selector.
//! - [`nn`]: a small feed-forward classifier with an embedding tap, exact
//!   reverse-mode gradients through every mixing operator, AdamW, and a
//!   finite-difference gradient checker.
//! - [`data`]: synthetic long-tail multi-label data, WAV ingestion, the
//!   mel front-end, augmentations, recording-level splits and subsets.
//! - [`metrics`]: macro F-score with frequency-group and polyphony
//!   stratification.
//! - [`experiment`]: config-driven runner behind the `mix2` binary.
//!
//! Matrices are row-major `ndarray::Array2<f64>` with one example per row.

pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod mixops;
pub mod nn;

pub use error::{Error, Result};
