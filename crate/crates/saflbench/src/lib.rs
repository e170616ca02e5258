//! Deterministic desk-scale simulator for synchronous and semi-asynchronous
//! federated learning.
//!
//! The crate wires five layers together:
//!
//! - [`model`]: tiny from-scratch softmax / MLP classifiers over flat `f64`
//!   parameter vectors, with analytic gradients checked against central
//!   differences.
//! - [`data`] and [`partition`]: synthetic Gaussian-mixture datasets and four
//!   client partitioning schemes (IID, label shards, shared-Dirichlet with
//!   log-normal sizes, per-client Dirichlet).
//! - [`protocol`]: the synchronous round loop and the semi-asynchronous
//!   discrete-event loop, with gradient-mean and weighted-weight aggregation.
//! - [`metrics`]: per-aggregation evaluation, convergence epochs, severe
//!   oscillation counts, staleness, and byte accounting.
//! - [`config`] and [`report`]: declarative TOML run configs and CSV/JSON
//!   artifact emission.
//!
//! Everything is seeded: a run is a pure function of its resolved config, and
//! its metrics log is bit-identical across repeats and worker counts.

pub mod config;
pub mod data;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod model;
pub mod partition;
pub mod presets;
pub mod protocol;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
