//! GAN-based simultaneous classification and novelty detection.
//!
//! A discriminator with `K + 1` outputs (K nominal classes plus a "fake"
//! class) is trained against a generator optimized with a feature-matching
//! loss. At test time the fake-class probability of a real input is its
//! novelty score. The crate also carries the analytic densities, optimal
//! detectors and evaluation metrics used to check that claim.
//!
//! Module map:
//!
//! - [`tensor`]: dense tensors and a reverse-mode differentiation tape.
//! - [`nn`]: weight-normalized dense layers, Adam, and the parameter file codec.
//! - [`gan`]: the K+1 discriminator, generator losses, training and model files.
//! - [`scores`]: novelty scorers (ND-GAN ratio, entropy, max-prob, kNN).
//! - [`density`]: Gaussian-mixture densities and optimal detectors.
//! - [`metrics`]: ROC/AUROC, FPR thresholds, holdout splits and benchmarks.
//! - [`data`]: datasets, synthetic rings, IDX and CSV ingestion.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod density;
mod error;
pub mod gan;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod scores;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Tensor, TensorError};
