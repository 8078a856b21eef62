//! Threshold-based attack detection and isolation with known noise bounds.
//!
//! Detection compares each reading against the plain mean of all `N`
//! readings; the threshold for sensor `i` is `sup_j b_j + b_i`. A window of
//! `T` consecutive samples is flagged when any of its samples trips a
//! threshold.
//!
//! Isolation picks a reference sensor `i*` out of the fusion-selected subset
//! (which is attack-free when `2q < N`) and flags every sensor whose reading
//! differs from the reference by more than `b_{i*} + b_i`.
//!
//! Both comparisons are strict (`>`); a clean sensor with in-bound noise can
//! never be flagged.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::fusion::{FusionOutput, MeasurementVector, SensorSet};

/// Default detection window length in samples.
pub const DEFAULT_WINDOW_SIZE: usize = 10;

/// Known per-sensor noise bounds `||nu_i||_inf`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseBounds {
    per_sensor: Vec<f64>,
    sup: f64,
}

impl NoiseBounds {
    pub fn new(per_sensor: Vec<f64>) -> Result<Self> {
        if per_sensor.is_empty() {
            return Err(FusionError::EmptyInput("noise bounds".into()));
        }
        if let Some(b) = per_sensor.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
            return Err(FusionError::Domain(format!(
                "noise bounds must be finite and non-negative, got {b}"
            )));
        }
        let sup = per_sensor.iter().copied().fold(0.0, f64::max);
        Ok(Self { per_sensor, sup })
    }

    pub fn per_sensor(&self) -> &[f64] {
        &self.per_sensor
    }

    /// `||nu||_inf`, the largest per-sensor bound.
    pub fn sup(&self) -> f64 {
        self.sup
    }

    pub fn len(&self) -> usize {
        self.per_sensor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_sensor.is_empty()
    }
}

/// A timestamped measurement vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedMeasurement {
    pub time: f64,
    pub values: MeasurementVector,
}

/// Outcome of one detection window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub window_index: usize,
    pub detected: bool,
    pub first_trigger_time: Option<f64>,
    /// Union of the sensors that tripped a threshold anywhere in the window.
    pub triggering_sensors: SensorSet,
    /// Number of samples in the window.
    pub samples: usize,
    /// True for a trailing window shorter than `T`.
    pub partial: bool,
}

/// Outcome of isolating attacked sensors at one instant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsolationReport {
    pub time: f64,
    pub reference_sensor: usize,
    pub isolated_set: SensorSet,
    pub thresholds: Vec<f64>,
}

impl IsolationReport {
    /// Complement of the isolated set in `1..=N`.
    pub fn attack_free_set(&self) -> SensorSet {
        SensorSet::from_indices((1..=self.thresholds.len()).filter(|i| !self.isolated_set.contains(*i)))
    }
}

/// How the isolation reference sensor is drawn from the selected subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferencePolicy {
    #[default]
    LowestIndex,
    SeededRandom,
}

/// Stateful reference-sensor chooser. The random variant owns its stream.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum ReferenceSelector {
    LowestIndex,
    SeededRandom(ChaCha8Rng),
}

impl ReferenceSelector {
    pub fn policy(&self) -> ReferencePolicy {
        match self {
            Self::LowestIndex => ReferencePolicy::LowestIndex,
            Self::SeededRandom(_) => ReferencePolicy::SeededRandom,
        }
    }
}

/// `tau_di = sup_j b_j + b_i`.
pub fn detection_thresholds(bounds: &NoiseBounds) -> Vec<f64> {
    bounds.per_sensor.iter().map(|b| bounds.sup + b).collect()
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(FusionError::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Sensors whose deviation from the all-sensor mean exceeds their threshold.
pub fn detect_sample(d: &MeasurementVector, thresholds: &[f64]) -> Result<SensorSet> {
    check_len(d.len(), thresholds.len())?;
    let mean = d.mean();
    Ok(SensorSet::from_indices(
        d.values()
            .iter()
            .zip(thresholds)
            .enumerate()
            .filter(|(_, (v, tau))| (mean - **v).abs() > **tau)
            .map(|(i, _)| i + 1),
    ))
}

/// Windowed detection over a time-ordered sample stream.
pub fn detect_window(
    samples: &[TimedMeasurement],
    thresholds: &[f64],
    window_size: usize,
) -> Result<Vec<DetectionReport>> {
    if samples.is_empty() {
        return Err(FusionError::EmptyInput("detection needs at least one sample".into()));
    }
    if window_size == 0 {
        return Err(FusionError::Domain("window size must be at least 1".into()));
    }
    samples
        .chunks(window_size)
        .enumerate()
        .map(|(window_index, chunk)| {
            let mut first_trigger_time = None;
            let mut triggered = Vec::new();
            for s in chunk {
                let hit = detect_sample(&s.values, thresholds)?;
                if !hit.is_empty() {
                    first_trigger_time.get_or_insert(s.time);
                    triggered.extend(hit.iter());
                }
            }
            Ok(DetectionReport {
                window_index,
                detected: first_trigger_time.is_some(),
                first_trigger_time,
                triggering_sensors: SensorSet::from_indices(triggered),
                samples: chunk.len(),
                partial: chunk.len() < window_size,
            })
        })
        .collect()
}

/// Picks `i*` from the fusion-selected subset.
pub fn select_reference_sensor(f: &FusionOutput, selector: &mut ReferenceSelector) -> usize {
    let members = f.selected_subset.indices();
    match selector {
        ReferenceSelector::LowestIndex => members[0],
        ReferenceSelector::SeededRandom(rng) => members[rng.random_range(0..members.len())],
    }
}

/// `tau_i = b_{i*} + b_i`.
pub fn isolation_thresholds(bounds: &NoiseBounds, i_star: usize) -> Result<Vec<f64>> {
    if i_star == 0 || i_star > bounds.len() {
        return Err(FusionError::IndexOutOfRange { index: i_star, n_sensors: bounds.len() });
    }
    let base = bounds.per_sensor[i_star - 1];
    Ok(bounds.per_sensor.iter().map(|b| base + b).collect())
}

/// Isolates sensors that disagree with the reference beyond their threshold.
pub fn isolate(
    time: f64,
    d: &MeasurementVector,
    f: &FusionOutput,
    bounds: &NoiseBounds,
    selector: &mut ReferenceSelector,
) -> Result<IsolationReport> {
    check_len(d.len(), bounds.len())?;
    f.selected_subset.check_range(d.len())?;
    let reference_sensor = select_reference_sensor(f, selector);
    let thresholds = isolation_thresholds(bounds, reference_sensor)?;
    let reference = d.get(reference_sensor);
    let isolated_set = SensorSet::from_indices(
        d.values()
            .iter()
            .zip(&thresholds)
            .enumerate()
            .filter(|(_, (v, tau))| (reference - **v).abs() > **tau)
            .map(|(i, _)| i + 1),
    );
    Ok(IsolationReport { time, reference_sensor, isolated_set, thresholds })
}
