//! Conditional determinantal-point-process toolkit for selecting and
//! optimizing diverse sets of variable-length sequences.
//!
//! The pipeline: variable-length sequences are compared with soft dynamic
//! time warping under the L1 frame metric ([`sequences`]); a quality-weighted
//! PSD kernel `L = diag(q) S diag(q)` records which items are conditioned on
//! ([`kernel`]); conditional probabilities, marginal kernels, and the
//! induced-cardinality objective with its analytic gradient live in [`cdpp`];
//! exact samplers and singleton MAP inference in [`sampling`]; a trainable
//! candidate generator with the full gradient chain, inference loop, and the
//! objective-stability experiment in [`diversifier`]. Prominence-based text
//! segmentation ([`segmentation`]) and batch diversity metrics ([`metrics`])
//! round out the toolkit.
//!
//! Every stochastic entry point takes an explicit 64-bit seed; see
//! [`rng`] for the generator contract.

// Validation uses `!(x > 0.0)` so NaN fails closed.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cdpp;
pub mod diversifier;
pub mod error;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod sampling;
pub mod segmentation;
pub mod sequences;

pub use error::{Error, Result};
pub use kernel::{quality_score, DppKernel, QualityVector};
pub use sequences::{
    similarity_matrix, soft_dtw, soft_dtw_backward, FeatureSequence, SimilarityMatrix,
};
