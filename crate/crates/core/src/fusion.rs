//! Subset-average fusion of redundant spacing measurements.
//!
//! A vehicle carries `N` sensors that all measure the same inter-vehicle
//! distance. At most `q` of them may be corrupted by an attacker at any
//! instant, and the corrupted set may change over time. For every subset `J`
//! of `N - q` sensors the fusion rule computes the subset average and its
//! spread `pi_J = max_{i in J} |avg_J - D_i|`, then selects the subset with
//! the smallest spread. The average of that subset is the fused estimate.
//!
//! When `2q < N` every subset of size `N - q` contains at least one clean
//! sensor, and the fused value stays within `3 * sup|noise|` of the truth no
//! matter what the attacker injects.
//!
//! Sensor indices are 1-based throughout the public API.

use std::fmt;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};

/// Default cap on the number of subsets `fuse` is allowed to enumerate.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// Sorted set of 1-based sensor indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SensorSet(Vec<usize>);

impl SensorSet {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// Builds a set from arbitrary indices; duplicates are removed and the
    /// result is sorted ascending.
    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        let mut v: Vec<usize> = indices.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    /// Checks every member is in `1..=n`.
    pub fn check_range(&self, n: usize) -> Result<()> {
        match self.0.iter().find(|&&i| i == 0 || i > n) {
            Some(&index) => Err(FusionError::IndexOutOfRange { index, n_sensors: n }),
            None => Ok(()),
        }
    }

    /// Semicolon-joined form used in CSV cells, e.g. `1;3`. Empty sets render
    /// as the empty string.
    pub fn to_csv_cell(&self) -> String {
        self.0.iter().map(|i| i.to_string()).join(";")
    }
}

impl fmt::Display for SensorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.0.iter().join(","))
    }
}

impl From<Vec<usize>> for SensorSet {
    fn from(v: Vec<usize>) -> Self {
        Self::from_indices(v)
    }
}

impl<const K: usize> From<[usize; K]> for SensorSet {
    fn from(v: [usize; K]) -> Self {
        Self::from_indices(v)
    }
}

/// The `N` simultaneous readings `D(t)` of one vehicle's spacing sensors.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct MeasurementVector(Vec<f64>);

impl MeasurementVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(FusionError::EmptyMeasurement);
        }
        if let Some((i, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(FusionError::NonFiniteMeasurement { sensor: i + 1, value });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Reading of sensor `index` (1-based). Panics when out of range.
    pub fn get(&self, index: usize) -> f64 {
        self.0[index - 1]
    }

    /// Mean over all `N` readings.
    pub fn mean(&self) -> f64 {
        let anchor = self.0[0];
        anchor + self.0.iter().map(|v| v - anchor).sum::<f64>() / self.0.len() as f64
    }
}

/// Sensor-bank dimensions: `N` sensors, at most `q` attacked at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionConfig {
    n_sensors: usize,
    max_attacked: usize,
    enumeration_cap: u128,
}

impl FusionConfig {
    /// Fails unless `N >= 1` and `2q < N`.
    pub fn new(n_sensors: usize, max_attacked: usize) -> Result<Self> {
        if n_sensors == 0 {
            return Err(FusionError::Domain("sensor count must be positive".into()));
        }
        if !reconstructible(n_sensors, max_attacked) {
            return Err(FusionError::NotReconstructible { n_sensors, max_attacked });
        }
        Ok(Self { n_sensors, max_attacked, enumeration_cap: DEFAULT_ENUMERATION_CAP })
    }

    pub fn with_enumeration_cap(mut self, cap: u128) -> Self {
        self.enumeration_cap = cap;
        self
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn max_attacked(&self) -> usize {
        self.max_attacked
    }

    /// Size of every candidate subset, `N - q`.
    pub fn subset_size(&self) -> usize {
        self.n_sensors - self.max_attacked
    }

    pub fn enumeration_cap(&self) -> u128 {
        self.enumeration_cap
    }
}

/// Result of one fusion step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionOutput {
    /// Minimum-spread subset `sigma(t)`, cardinality `N - q`.
    pub selected_subset: SensorSet,
    /// Average of the selected readings.
    pub fused_value: f64,
    /// Spread `pi_sigma` of the selected subset.
    pub spread_of_selected: f64,
    /// Spread of every candidate subset in enumeration order, when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub all_spreads: Option<Vec<(SensorSet, f64)>>,
}

/// Exact binomial coefficient, or `None` once it exceeds `limit`.
fn binomial_capped(n: usize, k: usize, limit: u128) -> Option<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) is always integral at this point
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
        if acc > limit {
            return None;
        }
    }
    Some(acc)
}

fn check_enumeration(n: usize, k: usize, cap: u128) -> Result<u128> {
    if n == 0 || k == 0 || k > n {
        return Err(FusionError::Domain(format!("subset size {k} must satisfy 1 <= k <= n = {n}")));
    }
    binomial_capped(n, k, cap).ok_or_else(|| FusionError::BudgetExceeded {
        n,
        k,
        // recomputed without the cap for the message; saturates on overflow
        count: binomial_capped(n, k, u128::MAX).unwrap_or(u128::MAX),
        cap,
    })
}

/// All size-`k` subsets of `{1..n}` in lexicographic order.
pub fn enumerate_subsets(n: usize, k: usize) -> Result<Vec<SensorSet>> {
    enumerate_subsets_capped(n, k, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_subsets_capped(n: usize, k: usize, cap: u128) -> Result<Vec<SensorSet>> {
    check_enumeration(n, k, cap)?;
    Ok((1..=n).combinations(k).map(SensorSet).collect())
}

fn check_subset(d: &MeasurementVector, subset: &SensorSet) -> Result<()> {
    if subset.is_empty() {
        return Err(FusionError::InvalidSubset("subset is empty".into()));
    }
    if let Some(&i) = subset.indices().iter().find(|&&i| i == 0 || i > d.len()) {
        return Err(FusionError::InvalidSubset(format!(
            "index {i} outside 1..={} in {subset}",
            d.len()
        )));
    }
    Ok(())
}

// Averages around the first member so that identical readings reproduce
// themselves exactly.
/// Mean and `k * spread` of a subset. Both are taken relative to the first
/// member, so equal readings reproduce exactly, and the scaled spread
/// `max |sum_j (D_j - a) - k (D_i - a)|` is computed without division so
/// that exact ties stay exact ties.
fn moments(values: &[f64], subset: &[usize]) -> (f64, f64) {
    let anchor = values[subset[0] - 1];
    let k = subset.len() as f64;
    let offset: f64 = subset.iter().map(|&i| values[i - 1] - anchor).sum();
    let scaled = subset.iter().map(|&i| (offset - k * (values[i - 1] - anchor)).abs()).fold(0.0, f64::max);
    (anchor + offset / k, scaled)
}

/// Mean of the readings indexed by `subset`.
pub fn subset_average(d: &MeasurementVector, subset: &SensorSet) -> Result<f64> {
    check_subset(d, subset)?;
    Ok(moments(d.values(), subset.indices()).0)
}

/// Largest deviation of a member reading from the subset mean.
pub fn subset_spread(d: &MeasurementVector, subset: &SensorSet) -> Result<f64> {
    check_subset(d, subset)?;
    let (_, scaled) = moments(d.values(), subset.indices());
    Ok(scaled / subset.len() as f64)
}

/// Runs the minimum-spread fusion rule. Ties go to the lexicographically
/// smallest subset.
pub fn fuse(d: &MeasurementVector, cfg: &FusionConfig) -> Result<FusionOutput> {
    fuse_impl(d, cfg, false)
}

/// Same as [`fuse`], additionally returning every candidate spread.
pub fn fuse_with_spreads(d: &MeasurementVector, cfg: &FusionConfig) -> Result<FusionOutput> {
    fuse_impl(d, cfg, true)
}

fn fuse_impl(d: &MeasurementVector, cfg: &FusionConfig, keep_spreads: bool) -> Result<FusionOutput> {
    if d.len() != cfg.n_sensors {
        return Err(FusionError::DimensionMismatch { expected: cfg.n_sensors, actual: d.len() });
    }
    let k = cfg.subset_size();
    check_enumeration(cfg.n_sensors, k, cfg.enumeration_cap)?;

    let values = d.values();
    let mut spreads = keep_spreads.then(Vec::new);
    let mut best: Option<(Vec<usize>, f64, f64)> = None;
    for subset in (1..=cfg.n_sensors).combinations(k) {
        let (avg, scaled) = moments(values, &subset);
        if let Some(all) = spreads.as_mut() {
            all.push((SensorSet(subset.clone()), scaled / k as f64));
        }
        // strict comparison keeps the earliest subset on ties
        if best.as_ref().is_none_or(|(_, _, s)| scaled < *s) {
            best = Some((subset, avg, scaled));
        }
    }
    let (subset, fused_value, scaled) = best.expect("at least one subset");
    Ok(FusionOutput {
        selected_subset: SensorSet(subset),
        fused_value,
        spread_of_selected: scaled / k as f64,
        all_spreads: spreads,
    })
}

/// True iff the spacing can be recovered from `n` readings with up to `q`
/// of them arbitrarily corrupted, i.e. `2q < n`.
pub fn reconstructible(n: usize, q: usize) -> bool {
    2 * q < n
}

/// Worst-case fused error `3 * sup|noise|`.
pub fn theoretical_error_bound(noise_sup: f64) -> Result<f64> {
    if !(noise_sup >= 0.0) || !noise_sup.is_finite() {
        return Err(FusionError::Domain(format!(
            "noise supremum must be finite and non-negative, got {noise_sup}"
        )));
    }
    Ok(3.0 * noise_sup)
}

/// Two attack patterns that make distinct truths indistinguishable.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusableAttacks {
    /// Attacked set paired with the truth `d`.
    pub set_a: SensorSet,
    /// Attacked set paired with the alternative truth `d_bar`.
    pub set_b: SensorSet,
    /// Attack injected on top of `d + noise`.
    pub attack_a: Vec<f64>,
    /// Attack injected on top of `d_bar + noise`.
    pub attack_b: Vec<f64>,
}

/// For `2q >= n`, builds attacks `eta_a` and `eta_b`, each supported on `q`
/// sensors, such that `d + m + eta_a == d_bar + m + eta_b` for every noise
/// vector `m`. Returns `None` when `2q < n` (no such pair exists) or `q > n`.
pub fn confusable_attacks(n: usize, q: usize, d: f64, d_bar: f64) -> Option<ConfusableAttacks> {
    if reconstructible(n, q) || q > n {
        return None;
    }
    // W_a = {1..q}, W_b = {n-q+1..n}; together they cover every sensor.
    let set_a = SensorSet::from_indices(1..=q);
    let set_b = SensorSet::from_indices(n - q + 1..=n);
    let mut attack_a = vec![0.0; n];
    let mut attack_b = vec![0.0; n];
    for i in 1..=n {
        match (set_a.contains(i), set_b.contains(i)) {
            (true, true) => {
                attack_a[i - 1] = d_bar;
                attack_b[i - 1] = d;
            }
            (true, false) => attack_a[i - 1] = d_bar - d,
            (false, true) => attack_b[i - 1] = d - d_bar,
            (false, false) => unreachable!("2q >= n covers every sensor"),
        }
    }
    Some(ConfusableAttacks { set_a, set_b, attack_a, attack_b })
}
