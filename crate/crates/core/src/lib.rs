//! Neighborhood-enriched contrastive graph collaborative filtering.
//!
//! User and item embeddings are learned on the bipartite interaction graph with
//! a LightGCN-style linear propagation backbone. Training jointly minimizes a
//! BPR ranking loss, a structure-contrastive loss that pairs each node's
//! layer-0 embedding with its even-layer propagation output, and a
//! prototype-contrastive loss against K-means centroids that are re-estimated
//! once per epoch (hard EM).
//!
//! Module map:
//!
//! - [`dataset`]: ingestion, k-core filtering, per-user splits, negative sampling
//! - [`graph`]: the normalized bipartite adjacency and the propagation kernel
//! - [`model`]: embedding table, forward pass, scoring, checkpoints
//! - [`objectives`]: loss terms and the analytic gradient of the total loss
//! - [`prototypes`]: K-means E-step
//! - [`trainer`]: Adam, early stopping, the EM training loop
//! - [`evaluator`]: full-ranking Recall@N / NDCG@N and sparsity groups
//! - [`cli`]: the `prepare` / `train` / `evaluate` / `export` commands

pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod graph;
pub mod matrix;
pub mod model;
pub mod objectives;
pub mod prototypes;
pub mod rng;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
