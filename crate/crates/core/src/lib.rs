//! Convolutional classifiers for extreme-weather patches.
//!
//! The crate is split along the pipeline:
//!
//! * [`numerics`]: dense tensors, dot products, seeded initialization.
//! * [`layers`]: convolution, max pooling, fully connected, ReLU and logistic
//!   layers with hand-derived backward passes, plus the training loss.
//! * [`network`]: the three event presets, SGD training, evaluation,
//!   gradient checking and the `CNNM` model file.
//! * [`hyperopt`]: Gaussian-process Bayesian optimization with expected
//!   improvement and a master/worker trial loop over an append-only store.
//! * [`data`]: synthetic event fields, centred patch extraction,
//!   normalization, stratified splits and the `CPDS` dataset container.
//!
//! Batch-level loops (minibatch gradients, evaluation, dataset generation)
//! run on rayon when the `parallel` feature is enabled and fall back to a
//! sequential loop otherwise. Both paths produce bit-identical results.

// `!(x > 0.0)` is used on purpose where NaN must take the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;
pub mod data;
pub mod error;
pub mod exec;
pub mod hyperopt;
pub mod layers;
pub mod network;
pub mod numerics;

pub use error::{Error, Result};
pub use exec::Execution;
pub use numerics::{Rng, Tensor};
