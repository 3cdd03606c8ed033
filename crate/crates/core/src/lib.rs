//! Multi-label classification over a label graph.
//!
//! The crate bundles everything needed to train and evaluate an
//! attention-based message-passing classifier whose label nodes are
//! initialized from (and regularized toward) pretrained word embeddings:
//!
//! * [`data_io`]: canonical sparse text format for multi-label datasets.
//! * [`embeddings`]: word-embedding tables, label anchors and the anchor regularizer.
//! * [`model`]: bag-of-features encoder plus the label-graph decoder, with exact gradients.
//! * [`losses`]: binary cross entropy, asymmetric loss with probability shifting.
//! * [`noise`]: seeded label-noise injectors.
//! * [`metrics`]: example-based, micro and macro F1; embedding co-occurrence distances.
//! * [`train`]: Adam training loop, model selection and finite-difference gradient checks.
//!
//! Batch work (per-sample gradients, prediction, noise rows) runs on rayon when
//! the `parallel` feature is enabled and falls back to plain loops otherwise.
//! Reductions always happen in a fixed sample order, so results are identical
//! with or without the feature.

pub mod data_io;
pub mod embeddings;
mod error;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod par;
pub mod train;

pub use error::{Error, Result};
