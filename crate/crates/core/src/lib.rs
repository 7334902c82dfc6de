//! Simulator and solvers for two-level incentive mechanisms in hierarchical
//! federated learning.
//!
//! The lower level is a coalition formation game: devices pick an edge server
//! under a preference rule, coalition bandwidth is reallocated by gradient
//! projection, and each device trains the deadline-saturating amount of data.
//! The upper level is a leader-follower pricing game: the cloud posts
//! per-edge unit rewards and each edge server answers with its aggregation
//! count. A batch experiment driver generates instances, runs seeded trials
//! under all preference rules and emits tidy CSV/JSON results.

// Validations use `!(x > 0.0)` on purpose: NaN must fail them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandwidth;
pub mod coalition;
pub mod economics;
pub mod error;
pub mod experiment;
pub mod model;
pub mod output;
pub mod stackelberg;
pub mod stats;

#[cfg(test)]
pub(crate) mod testkit;

pub use error::{Error, Result};
