//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("measurement vector must contain at least one reading")]
    EmptyMeasurement,

    #[error("non-finite reading {value} at sensor {sensor}")]
    NonFiniteMeasurement { sensor: usize, value: f64 },

    #[error(
        "spacing is not reconstructible with {n_sensors} sensors and up to {max_attacked} attacked: \
         recovery under arbitrary attacks requires 2q < N"
    )]
    NotReconstructible { n_sensors: usize, max_attacked: usize },

    #[error("combinatorial budget exceeded: C({n}, {k}) = {count} subsets exceeds the cap of {cap}")]
    BudgetExceeded { n: usize, k: usize, count: u128, cap: u128 },

    #[error("invalid subset: {0}")]
    InvalidSubset(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("sensor index {index} out of range 1..={n_sensors}")]
    IndexOutOfRange { index: usize, n_sensors: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    InvalidConfig(Vec<String>),

    #[error("simulation aborted at t = {time}: non-finite state in {what}")]
    NonFiniteState { time: f64, what: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, FusionError>;
