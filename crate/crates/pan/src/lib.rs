//! Path-integral graph convolution and entropy-based pooling.
//!
//! The propagation operator here is not the adjacency matrix but a
//! normalized weighted sum of its powers: every walk up to a cutoff
//! length carries weight, so information flows along all short paths at
//! once. The same matrix yields a node centrality (its diagonal) that
//! drives top-K pooling, and the per-length weights can themselves be
//! trained. Everything runs on a small reverse-mode tape; there is no
//! external ML dependency.
//!
//! The pieces, bottom up:
//!
//! - [`graph`]: dense matrices, categorical feature tables, validated
//!   undirected graphs.
//! - [`met`]: the transition matrix built from weighted walk counts,
//!   with row-stochastic and symmetric normalizations.
//! - [`tape`]: reverse-mode autodiff over dense tensors.
//! - [`layers`]: convolution, scoring, top-K selection, the edge-feature
//!   lump layer, readout, and the classifier head.
//! - [`model`]: the two assembled variants (node-only and
//!   edge-attributed) behind one config struct.
//! - [`train`] / [`metrics`] / [`checkpoint`]: weighted BCE, Adam, the
//!   epoch loop with best-validation snapshotting, ROC-AUC, and an exact
//!   round-trip weight format.
//! - [`data`]: JSON and raw-CSV dataset loading, plus a synthetic
//!   triangle-detection task.
//! - [`gradcheck`] / [`reference`]: finite-difference verification and
//!   slow independent oracles the tests compare against.
//! - [`cli`]: the `pan` binary (train, eval, inspect-met, gradcheck,
//!   ingest).
//!
//! Each capability has a runnable demo under `examples/`:
//!
//! ```text
//! cargo run --release --example train_synthetic   end-to-end training
//! cargo run --example met_centrality              the operator and its diagonal
//! cargo run --example pooling                     scores, top-K, induced subgraph
//! cargo run --example autodiff_basics             the tape on its own
//! cargo run --example gradcheck                   gradients vs finite differences
//! cargo run --example json_dataset                dataset interchange round trip
//! ```

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod met;
pub mod metrics;
pub mod model;
pub mod reference;
pub mod tape;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
