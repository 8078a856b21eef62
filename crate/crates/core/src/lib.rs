//! Attack-resilient fusion of redundant spacing sensors for connected
//! vehicles, with threshold-based attack detection and isolation and a
//! closed-loop CACC platoon simulator that runs the fusion rule in the loop.
//!
//! - [`fusion`]: minimum-spread subset fusion and reconstructability.
//! - [`detection`]: windowed detection and reference-based isolation.
//! - [`scenario`]: ground truth, noise and attack generation with seeded streams.
//! - [`platoon`]: error-state platoon dynamics integrated with RK4.
//! - [`metrics`]: norms, string stability, bound audits, confusion tallies.
//! - [`config`] and [`runner`]: JSON scenario files, experiments and artifacts.

// negated comparisons are used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod detection;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod platoon;
pub mod runner;
pub mod scenario;

pub use error::{FusionError, Result};
pub use fusion::{fuse, FusionConfig, FusionOutput, MeasurementVector, SensorSet};
