//! Data-driven control toolkit: Gaussian-process dynamics learning,
//! chance-constrained minimum-expected-time control by dynamic programming,
//! and open-loop experiment design by stochastic gradient descent on the
//! expected post-experiment control cost.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`gp`]: multi-output GP regression over state-input pairs with noisy
//!   observations (posterior mean/variance queries, dataset handling).
//! - [`process`]: the ground-truth scalar benchmark process used for data
//!   generation and out-of-model policy evaluation.
//! - [`dp`]: grid dynamic programming for the chance-constrained
//!   minimum-expected-time problem with a Lagrangian dual.
//! - [`design`]: experiment design via projected SGD on a Monte-Carlo
//!   estimate of the post-experiment control cost.
//! - [`bench`]: the benchmark harness comparing design methods over many
//!   simulated experiment outcomes.
//! - [`config`] / [`cli`]: configuration schema and command-line entry point.

pub mod bench;
pub mod cli;
pub mod config;
pub mod design;
pub mod dp;
pub mod gp;
pub mod process;
pub mod quadrature;
pub mod seeding;
