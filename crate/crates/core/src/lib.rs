//! Task-centric clustered federated learning, simulated end to end.
//!
//! Each client clusters its own embeddings into task shards and trains one
//! adapter per shard. The server clusters the pooled shard centroids into
//! global task clusters, schedules one cluster per client per round
//! (round-robin) and averages the returned adapters per cluster. At test time
//! the [`router`] sends every sample to the adapter of its nearest centroid,
//! either among the client's own centroids ([`router::EvalMode::Local`]) or
//! among all global centroids ([`router::EvalMode::Global`]).
//!
//! Everything is a pure function of a master seed, so whole experiment grids
//! are byte-for-byte reproducible.
//!
//! Module map:
//!
//! - [`datagen`]: synthetic multi-task embedding scenarios and the embedding CSV format
//! - [`clustering`]: k-means (k-means++ / Lloyd), nearest-centroid assignment, silhouette
//! - [`adapter`]: the per-task linear softmax head, SGD and parameter averaging
//! - [`client`]: local clustering and per-round shard training
//! - [`server`]: global clustering, round-robin planning, aggregation, the federation loop
//! - [`router`]: nearest-centroid evaluation routing with per-adapter batching
//! - [`baselines`]: FedAvg, local-only and client-level clustering references
//! - [`harness`]: experiment grids, metrics files, silhouette tables, exports

pub mod adapter;
pub mod baselines;
pub mod client;
pub mod clustering;
pub mod datagen;
mod error;
pub mod harness;
pub mod metrics;
pub mod rng;
pub mod router;
pub mod server;

pub use error::{Error, Result};
