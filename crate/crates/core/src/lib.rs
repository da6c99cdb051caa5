//! Count-rate models, dead-time Monte-Carlo and time-multiplexed detector
//! statistics for binary single-photon detectors (APDs).
//!
//! - [`photon_stats`]: coherent-state photon-number statistics and Mandel Q.
//! - [`apd_model`]: closed-form pulsed count rates and dead-time corrections.
//! - [`dead_time_sim`]: seeded, shardable event-driven detector simulation.
//! - [`tmd`]: convolution and loss matrices, forward model and deconvolution
//!   for time-multiplexed photon-number-resolving detection.
//! - [`calibrate`]: linear and saturation fits to sweep data, correction
//!   tables.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apd_model;
pub mod calibrate;
pub mod dead_time_sim;
pub mod error;
pub mod photon_stats;
pub mod tmd;

pub use error::{Error, Result};
