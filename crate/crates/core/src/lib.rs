//! Federated learning via mini-batch stochastic successive convex
//! approximation (SSCA).
//!
//! The crate covers sample-partitioned (horizontal) and feature-partitioned
//! (vertical) federations, for both unconstrained and constrained problems.
//! Each round, clients send sufficient statistics of a quadratic surrogate;
//! the server folds them into recursively averaged surrogate coefficients,
//! solves the surrogate problem in closed form (or with a log-barrier method
//! for the general constrained case) and moves the global model towards the
//! surrogate minimizer.
//!
//! Module map:
//!
//! - [`numerics`]: deterministic RNG streams, mini-batch sampling, vector
//!   helpers and a finite-difference gradient oracle.
//! - [`schedules`]: stepsize sequences and their validity report.
//! - [`surrogate`]: generic quadratic surrogate state.
//! - [`solvers`]: closed-form and barrier subproblem solvers.
//! - [`model`]: the two-layer swish/softmax classifier and its surrogate
//!   statistics.
//! - [`data`]: IDX loading, synthetic data and partitioners.
//! - [`protocol`]: messages, wire codec, transports and the server/client
//!   roles that run a round.
//! - [`baselines`]: SGD-family comparison algorithms and the SSCA/momentum
//!   equivalence harness.
//! - [`experiment`]: run configuration, the experiment runner and CSV output.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod data;
pub mod error;
pub mod experiment;
pub mod model;
pub mod numerics;
pub mod protocol;
pub mod schedules;
pub mod solvers;
pub mod surrogate;

pub use error::{Error, Result};

/// Toolkit version echoed into every metrics file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
