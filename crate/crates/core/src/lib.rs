//! Trace-norm regularized multitask learning.
//!
//! This crate fits a linear predictor per task under a shared weighted
//! trace-norm budget, evaluates the closed-form excess-risk bounds that
//! justify the method, and verifies the underlying matrix-concentration
//! inequalities by Monte Carlo on synthetic task families.
//!
//! Modules:
//! - [`linop`]: dense matrices, SVD-based norms, rank-one and PSD-order utilities;
//! - [`data`]: multitask datasets, clipped Lipschitz losses, sphere/subspace
//!   generators, and Monte Carlo risk oracles;
//! - [`solver`]: empirical risk minimization over the weighted trace-norm ball;
//! - [`bounds`]: covariance operators and excess-risk bound evaluators;
//! - [`concentration`]: tail-bound and Rademacher-complexity verification;
//! - [`harness`]: batch experiments, sweeps, and the CLI entry points.

pub mod bounds;
pub mod concentration;
pub mod data;
pub mod error;
pub mod harness;
pub mod linop;
pub mod seeding;
pub mod solver;

pub use error::{Error, Result};
