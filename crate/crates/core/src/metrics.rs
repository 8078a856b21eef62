//! Signal norms, string-stability verdicts, bound audits and confusion tallies.

use serde::Serialize;

use crate::detection::DetectionReport;
use crate::error::{FusionError, Result};
use crate::fusion::SensorSet;

/// Uniformly sampled scalar signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTrace {
    times: Vec<f64>,
    values: Vec<f64>,
    label: String,
}

impl SignalTrace {
    pub fn new(times: Vec<f64>, values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if times.is_empty() {
            return Err(FusionError::EmptyInput("signal trace".into()));
        }
        if times.len() != values.len() {
            return Err(FusionError::DimensionMismatch { expected: times.len(), actual: values.len() });
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(FusionError::GridMismatch("times must be strictly increasing".into()));
        }
        if times.len() > 2 {
            // positions are compared against t_0 + k * dt, relative to the time scale
            let dt = times[1] - times[0];
            let origin = times[0];
            let off_grid = times.iter().enumerate().any(|(k, t)| {
                let expected = origin + k as f64 * dt;
                (t - expected).abs() > 1e-12 * (expected.abs() + k as f64 * dt).max(dt)
            });
            if off_grid {
                return Err(FusionError::GridMismatch("times are not uniformly spaced".into()));
            }
        }
        Ok(Self { times, values, label: label.into() })
    }

    /// Trace on the grid `t_0 + k * dt`.
    pub fn uniform(t0: f64, dt: f64, values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        let times = (0..values.len()).map(|k| t0 + k as f64 * dt).collect();
        Self::new(times, values, label)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sample spacing; zero for a single-sample trace.
    pub fn dt(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            times: self.times.clone(),
            values: self.values.iter().map(|v| alpha * v).collect(),
            label: self.label.clone(),
        }
    }

    fn same_grid(&self, other: &Self) -> bool {
        self.times.len() == other.times.len()
            && self.times.first() == other.times.first()
            && (self.dt() - other.dt()).abs() <= 1e-12 * self.dt().abs()
    }
}

/// Which `L_p` norm to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Norm {
    L1,
    L2,
    LInf,
}

/// Left-endpoint Riemann approximation of `||s||_p`: the last sample only
/// closes the final interval. `L_inf` is the plain max over all samples.
pub fn lp_norm(s: &SignalTrace, p: Norm) -> f64 {
    let dt = s.dt();
    let head = &s.values[..s.values.len() - 1];
    match p {
        Norm::L1 => head.iter().map(|v| v.abs() * dt).sum(),
        Norm::L2 => head.iter().map(|v| v * v * dt).sum::<f64>().sqrt(),
        Norm::LInf => s.values.iter().fold(0.0, |m, v| m.max(v.abs())),
    }
}

/// Verdict for one predecessor/follower pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairVerdict {
    /// Follower position `i` (1-based within the trace list, `i >= 2`).
    pub index: usize,
    pub norm: f64,
    pub predecessor_norm: f64,
    pub ratio: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StringStabilityReport {
    pub pairs: Vec<PairVerdict>,
    pub warnings: Vec<String>,
}

impl StringStabilityReport {
    pub fn all_pass(&self) -> bool {
        self.pairs.iter().all(|p| p.pass)
    }
}

fn norm_ratio(norm: f64, prev: f64) -> f64 {
    match (norm == 0.0, prev == 0.0) {
        (true, true) => 1.0,
        (false, true) => f64::INFINITY,
        _ => norm / prev,
    }
}

/// Checks `||z_i||_p <= ||z_{i-1}||_p * (1 + tolerance)` along the string.
pub fn string_stability_check(traces: &[SignalTrace], p: Norm, tolerance: f64) -> Result<StringStabilityReport> {
    if traces.len() < 2 {
        return Err(FusionError::EmptyInput("string stability needs at least two traces".into()));
    }
    if !(tolerance >= 0.0) {
        return Err(FusionError::Domain(format!("tolerance must be >= 0, got {tolerance}")));
    }
    if let Some(bad) = traces.iter().find(|t| !t.same_grid(&traces[0])) {
        return Err(FusionError::GridMismatch(format!("trace {} is on a different grid", bad.label)));
    }
    let warnings = traces[1..]
        .iter()
        .filter(|t| t.values[0] != 0.0)
        .map(|t| format!("trace {} does not start at zero", t.label))
        .collect();
    let norms: Vec<f64> = traces.iter().map(|t| lp_norm(t, p)).collect();
    let pairs = norms
        .windows(2)
        .enumerate()
        .map(|(k, w)| PairVerdict {
            index: k + 2,
            norm: w[1],
            predecessor_norm: w[0],
            ratio: norm_ratio(w[1], w[0]),
            pass: w[1] <= w[0] * (1.0 + tolerance),
        })
        .collect();
    Ok(StringStabilityReport { pairs, warnings })
}

/// Samples of a fusion-error trace exceeding `3 * noise_sup`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundViolationReport {
    pub bound: f64,
    pub violations: usize,
    pub violation_times: Vec<f64>,
    pub max_abs_error: f64,
    pub time_of_max: f64,
}

pub fn bound_violation_report(fusion_errors: &SignalTrace, noise_sup: f64) -> Result<BoundViolationReport> {
    let bound = crate::fusion::theoretical_error_bound(noise_sup)?;
    let mut report = BoundViolationReport {
        bound,
        violations: 0,
        violation_times: Vec::new(),
        max_abs_error: 0.0,
        time_of_max: fusion_errors.times[0],
    };
    for (&t, &e) in fusion_errors.times.iter().zip(&fusion_errors.values) {
        if e.abs() > bound {
            report.violations += 1;
            report.violation_times.push(t);
        }
        if e.abs() > report.max_abs_error {
            report.max_abs_error = e.abs();
            report.time_of_max = t;
        }
    }
    Ok(report)
}

/// Classification tallies against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionStats {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

fn rate(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionStats {
    pub fn tally(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.true_positive += 1,
            (true, false) => self.false_positive += 1,
            (false, false) => self.true_negative += 1,
            (false, true) => self.false_negative += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.true_positive + self.false_positive + self.true_negative + self.false_negative
    }

    /// `TP / (TP + FN)`; `None` with no positives.
    pub fn true_positive_rate(&self) -> Option<f64> {
        rate(self.true_positive, self.true_positive + self.false_negative)
    }

    /// `FP / (FP + TN)`; `None` with no negatives.
    pub fn false_positive_rate(&self) -> Option<f64> {
        rate(self.false_positive, self.false_positive + self.true_negative)
    }

    pub fn accuracy(&self) -> Option<f64> {
        rate(self.true_positive + self.true_negative, self.total())
    }
}

/// Per-(instant, sensor) tallies over `n_sensors` sensors.
pub fn confusion_stats(predicted: &[SensorSet], truth: &[SensorSet], n_sensors: usize) -> Result<ConfusionStats> {
    if predicted.len() != truth.len() {
        return Err(FusionError::DimensionMismatch { expected: truth.len(), actual: predicted.len() });
    }
    let mut stats = ConfusionStats::default();
    for (p, t) in predicted.iter().zip(truth) {
        for i in 1..=n_sensors {
            stats.tally(p.contains(i), t.contains(i));
        }
    }
    Ok(stats)
}

/// Per-window tallies: a window is actually attacked when any of its instants
/// has a nonempty attacked set.
pub fn window_confusion_stats(reports: &[DetectionReport], truth: &[SensorSet]) -> Result<ConfusionStats> {
    let covered: usize = reports.iter().map(|r| r.samples).sum();
    if covered != truth.len() {
        return Err(FusionError::DimensionMismatch { expected: covered, actual: truth.len() });
    }
    let mut stats = ConfusionStats::default();
    let mut offset = 0;
    for r in reports {
        let attacked = truth[offset..offset + r.samples].iter().any(|w| !w.is_empty());
        stats.tally(r.detected, attacked);
        offset += r.samples;
    }
    Ok(stats)
}
