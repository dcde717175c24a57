//! Explaining a small convolutional classifier's prediction for one image.
//!
//! The pipeline resamples the query image with multiplicative Gaussian noise
//! ([`perturbation`]), records every conv channel's activations over the batch
//! ([`network`]), scores and ranks channels under six importance metrics
//! ([`importance`]) and maps the top-ranked channels back to input patches with
//! a deconvnet reverse pass ([`deconvnet`]). [`evaluation`] carries the
//! synthetic dataset and the patch-classifier, convergence and localization
//! harness.
//!
//! The crate is `no_std` + `alloc`. The `parallel` feature (implies `std`)
//! fans batch forward passes out over rayon; results are bitwise identical to
//! the serial path.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod deconvnet;
pub mod error;
pub mod evaluation;
pub mod explain;
pub mod importance;
pub mod network;
pub mod perturbation;
pub mod rng;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
pub use importance::{Metric, NeuronId};
pub use network::{ActivationTrace, NetworkSpec};
pub use rng::Rng;
pub use tensor::Tensor;
