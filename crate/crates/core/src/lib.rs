//! Targeted differential privacy for recommender training data.
//!
//! The crate is organized as a pipeline:
//!
//! - [`dataset`]: ingest, k-core pruning, per-user splits, synthetic data.
//! - [`stereotype`]: item-group-inclination and signed stereotypicality scores.
//! - [`privacy`]: the keep-or-replace coin-flip mechanism applied to the
//!   selected (targeted or random) part of every profile.
//! - [`tensor`]: a small reverse-mode autodiff core.
//! - [`recsys`]: MetaMF / NoMetaMF rating predictors.
//! - [`attack`]: attribute-inference attacker scored by balanced accuracy.
//! - [`harness`]: the (model, strategy, epsilon, beta, fold) grid, deltas,
//!   Pareto frontiers and summaries.
//!
//! Data-parallel loops (per-user protection, attack runs, grid cells, Monte
//! Carlo) go through [`exec`], which uses rayon when the `parallel` feature
//! is enabled and plain iterators otherwise. Results never depend on the
//! execution mode.

pub mod attack;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod harness;
pub mod privacy;
pub mod recsys;
pub mod seed;
pub mod stereotype;
pub mod tensor;

pub use error::{Error, Result};
