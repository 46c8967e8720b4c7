//! Simulator for differentially private, compressed stochastic gradient
//! push (DP-CSGP) over directed graphs.
//!
//! The crate is organised bottom-up:
//!
//! - [`topology`]: directed graphs, column-stochastic mixing and the mixing
//!   constants used by the step-size and compression admissibility checks.
//! - [`compression`]: `rand_a` sparsification and `gsgd_b` quantization with
//!   bit accounting.
//! - [`privacy`]: Gaussian noise calibration and gradient clipping.
//! - [`problems`]: finite-sum objectives and local datasets.
//! - [`engine`]: the synchronous node-level simulation, an independent
//!   matrix-form replay used as a test oracle, and diagnostics.
//! - [`harness`]: configuration files, theory schedules, experiment grids
//!   and summaries.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compression;
pub mod engine;
pub mod error;
pub mod harness;
pub mod privacy;
pub mod problems;
pub mod rng;
pub mod topology;

pub use error::{Error, Result};
