//! Experiments and their artifacts.
//!
//! Every run yields `meta.json` (configuration echo and provenance),
//! `summary.json` (metrics and invariant audit) and one or more CSV traces.
//! Summaries contain no wall-clock data, so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentKind, ScenarioConfig};
use crate::detection::{self, NoiseBounds, ReferencePolicy, ReferenceSelector, TimedMeasurement};
use crate::error::{FusionError, Result};
use crate::fusion::{self, SensorSet};
use crate::metrics::{self, ConfusionStats, Norm, SignalTrace, StringStabilityReport};
use crate::platoon::{self, LoopMonitor, PlatoonScenario, SensorBank};
use crate::scenario::{self, SensorSample, RNG_ALGORITHM};

const SAMPLE_CHANNEL: u32 = 0;
const SELECTOR_CHANNEL: u32 = 1 << 16;
/// At most this many invariant-violation messages are kept in a summary.
const MAX_VIOLATION_MESSAGES: usize = 20;

/// One CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub file_name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    fn new(file_name: impl Into<String>, header: &[&str]) -> Self {
        Self { file_name: file_name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    /// Index of a header column.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(dir.join(&self.file_name))?;
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

/// Set cell for isolation-style columns: `0` stands for the empty set.
fn set_or_zero(s: &SensorSet) -> String {
    if s.is_empty() { "0".into() } else { s.to_csv_cell() }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuseDemoSummary {
    pub samples: usize,
    pub attacked_samples: usize,
    pub noise_sup: Option<f64>,
    pub error_bound: Option<f64>,
    pub bound_violations: Option<usize>,
    pub max_abs_fusion_error: f64,
    pub mean_abs_fusion_error: f64,
    pub time_of_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectSummary {
    pub samples: usize,
    pub window_size: usize,
    pub thresholds: Vec<f64>,
    pub windows: usize,
    pub partial_windows: usize,
    pub detected_windows: usize,
    pub attacked_windows: usize,
    /// Detected attacked windows over attacked windows.
    pub window_detection_rate: Option<f64>,
    pub window_false_alarm_rate: Option<f64>,
    pub first_detection_time: Option<f64>,
    pub flagged_samples: usize,
    pub attacked_samples: usize,
    pub window_confusion: ConfusionStats,
    /// Per-instant tallies: flagged vs. attacked.
    pub sample_confusion: ConfusionStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsolateSummary {
    pub instants: usize,
    pub reference_policy: ReferencePolicy,
    pub attacked_instants: usize,
    /// Fraction of attacked instants at which every attacked sensor was isolated.
    pub isolation_success_rate: Option<f64>,
    /// Fraction of attacked instants at which the isolated set equals `W(t)`.
    pub exact_isolation_rate: Option<f64>,
    pub clean_reference_instants: usize,
    /// Attack-free sensors isolated while the reference was attack-free.
    pub false_positives_with_clean_reference: usize,
    pub sensor_confusion: ConfusionStats,
    pub max_abs_fusion_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VehicleSummary {
    pub vehicle: usize,
    pub fused: bool,
    pub max_abs_state: f64,
    pub max_abs_spacing_error: f64,
    pub terminal_spacing_error: f64,
    pub velocity_l2: f64,
    pub max_abs_fusion_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorSummary {
    pub fused_samples: usize,
    pub attacked_samples: usize,
    pub flagged_samples: usize,
    pub isolation_success_rate: Option<f64>,
    pub false_positives_with_clean_reference: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlatoonSummary {
    pub vehicles: usize,
    pub instants: usize,
    pub max_real_eigenvalue: f64,
    pub hurwitz: bool,
    pub warnings: Vec<String>,
    pub state_ceiling: f64,
    pub max_abs_state: f64,
    pub per_vehicle: Vec<VehicleSummary>,
    pub velocity_string_stability: StringStabilityReport,
    pub fusion_error_bound: Option<f64>,
    pub bound_violations: Option<usize>,
    pub max_abs_fusion_error: Option<f64>,
    pub monitor: Option<MonitorSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricAggregate {
    pub name: String,
    pub trials_reported: usize,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub trial: u32,
    /// Stream id of channel 0 for this trial; replay with the same seed.
    pub stream_id: u64,
    pub metrics: BTreeMap<String, Option<f64>>,
    pub invariant_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub inner: ExperimentKind,
    pub trials: usize,
    pub metrics: Vec<MetricAggregate>,
    pub total_invariant_violations: usize,
    pub per_trial: Vec<TrialOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum ExperimentSummary {
    FuseDemo(FuseDemoSummary),
    Detect(DetectSummary),
    Isolate(IsolateSummary),
    Platoon(PlatoonSummary),
    Montecarlo(MonteCarloSummary),
}

impl ExperimentSummary {
    /// Scalar metrics aggregated by Monte-Carlo runs.
    pub fn headline(&self) -> BTreeMap<String, Option<f64>> {
        let c = |n: usize| Some(n as f64);
        let list: Vec<(&str, Option<f64>)> = match self {
            Self::FuseDemo(s) => vec![
                ("max_abs_fusion_error", Some(s.max_abs_fusion_error)),
                ("mean_abs_fusion_error", Some(s.mean_abs_fusion_error)),
                ("bound_violations", s.bound_violations.map(|v| v as f64)),
            ],
            Self::Detect(s) => vec![
                ("window_detection_rate", s.window_detection_rate),
                ("window_false_alarm_rate", s.window_false_alarm_rate),
                ("sample_detection_rate", s.sample_confusion.true_positive_rate()),
                ("sample_false_alarm_rate", s.sample_confusion.false_positive_rate()),
                ("flagged_samples", c(s.flagged_samples)),
            ],
            Self::Isolate(s) => vec![
                ("isolation_success_rate", s.isolation_success_rate),
                ("exact_isolation_rate", s.exact_isolation_rate),
                ("false_positives_with_clean_reference", c(s.false_positives_with_clean_reference)),
                ("sensor_true_positive_rate", s.sensor_confusion.true_positive_rate()),
                ("sensor_false_positive_rate", s.sensor_confusion.false_positive_rate()),
                ("max_abs_fusion_error", Some(s.max_abs_fusion_error)),
            ],
            Self::Platoon(s) => vec![
                ("max_abs_state", Some(s.max_abs_state)),
                ("max_abs_fusion_error", s.max_abs_fusion_error),
                ("bound_violations", s.bound_violations.map(|v| v as f64)),
                (
                    "max_velocity_norm_ratio",
                    s.velocity_string_stability.pairs.iter().map(|p| p.ratio).reduce(f64::max),
                ),
            ],
            Self::Montecarlo(_) => Vec::new(),
        };
        list.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub invariant_violation_count: usize,
    /// First few violation messages; the count above is exhaustive.
    pub invariant_violations: Vec<String>,
    #[serde(flatten)]
    pub result: ExperimentSummary,
}

/// Everything a run writes.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub meta: serde_json::Value,
    pub summary: RunSummary,
    pub tables: Vec<CsvTable>,
}

impl RunArtifacts {
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summaries always serialize") + "\n"
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&self.meta)? + "\n")?;
        fs::write(dir.join("summary.json"), self.summary_json())?;
        for t in &self.tables {
            t.write(dir)?;
        }
        Ok(())
    }

    pub fn table(&self, file_name: &str) -> Option<&CsvTable> {
        self.tables.iter().find(|t| t.file_name == file_name)
    }
}

#[derive(Default)]
struct Violations {
    count: usize,
    messages: Vec<String>,
}

impl Violations {
    fn push(&mut self, msg: impl FnOnce() -> String) {
        self.count += 1;
        if self.messages.len() < MAX_VIOLATION_MESSAGES {
            self.messages.push(msg());
        }
    }
}

struct Outcome {
    result: ExperimentSummary,
    violations: Violations,
    tables: Vec<CsvTable>,
}

fn meta(cfg: &ScenarioConfig) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": cfg.experiment.name(),
        "seed": cfg.seed,
        "rng_algorithm": RNG_ALGORITHM,
        "stream_layout": "stream id = (trial << 32) | channel; sensor bank of vehicle i uses channel i, \
                          reference selector uses channel 65536 + i (channel 0 and 65536 outside the platoon)",
        "attack_resampling": "attacked set and attack values are redrawn at every sampling instant",
        "config": serde_json::to_value(&cfg.document)?,
    }))
}

/// Runs the configured experiment.
pub fn run(cfg: &ScenarioConfig) -> Result<RunArtifacts> {
    let outcome = match cfg.experiment {
        ExperimentKind::Montecarlo => run_montecarlo(cfg)?,
        kind => run_single(cfg, kind, 0)?,
    };
    Ok(RunArtifacts {
        meta: meta(cfg)?,
        summary: RunSummary {
            seed: cfg.seed,
            invariant_violation_count: outcome.violations.count,
            invariant_violations: outcome.violations.messages,
            result: outcome.result,
        },
        tables: outcome.tables,
    })
}

/// Runs and writes artifacts into `dir`.
pub fn run_to_dir(cfg: &ScenarioConfig, dir: &Path) -> Result<RunArtifacts> {
    let artifacts = run(cfg)?;
    artifacts.write(dir)?;
    Ok(artifacts)
}

fn run_single(cfg: &ScenarioConfig, kind: ExperimentKind, trial: u32) -> Result<Outcome> {
    match kind {
        ExperimentKind::FuseDemo => run_fuse_demo(cfg, trial),
        ExperimentKind::Detect => run_detect(cfg, trial),
        ExperimentKind::Isolate => run_isolate(cfg, trial),
        ExperimentKind::Platoon => run_platoon(cfg, trial),
        ExperimentKind::Montecarlo => Err(FusionError::Config("nested Monte-Carlo runs are not supported".into())),
    }
}

/// Draws the sampled sensor stream of a non-platoon experiment.
fn sensor_stream(cfg: &ScenarioConfig, trial: u32) -> Result<Vec<(f64, SensorSample)>> {
    let truth = cfg.ground_truth.as_ref().ok_or_else(|| FusionError::Config("ground truth is required".into()))?;
    let mut rng = scenario::make_rng_stream(cfg.seed, platoon::stream_id(trial, SAMPLE_CHANNEL));
    (0..cfg.instants())
        .map(|k| {
            let t = cfg.t_start + k as f64 * cfg.dt;
            let d = truth
                .value_at(t)
                .ok_or_else(|| FusionError::Config("ground truth has no closed form outside the platoon".into()))?;
            Ok((t, scenario::sample_measurements(d, &cfg.noise, &cfg.attack, &mut rng)?))
        })
        .collect()
}

fn within_bounds(sample: &SensorSample, bounds: &NoiseBounds) -> bool {
    sample.noise_values.iter().zip(bounds.per_sensor()).all(|(nu, b)| nu.abs() <= *b)
}

fn run_fuse_demo(cfg: &ScenarioConfig, trial: u32) -> Result<Outcome> {
    let stream = sensor_stream(cfg, trial)?;
    let bounds = cfg.noise.bounds();
    let bound = bounds.as_ref().map(|b| fusion::theoretical_error_bound(b.sup())).transpose()?;
    let mut header = vec!["t", "d_true", "d_hat", "fusion_error", "sigma"];
    let spread_columns: Vec<String> = if cfg.emit_all_spreads {
        fusion::enumerate_subsets_capped(cfg.fusion.n_sensors(), cfg.fusion.subset_size(), cfg.fusion.enumeration_cap())?
            .iter()
            .map(|s| format!("pi_{}", s.indices().iter().map(|i| i.to_string()).collect::<Vec<_>>().join("_")))
            .collect()
    } else {
        Vec::new()
    };
    header.extend(spread_columns.iter().map(String::as_str));
    let mut table = CsvTable::new("trace.csv", &header);

    let mut violations = Violations::default();
    let (mut max_err, mut sum_err, mut time_of_max, mut attacked, mut exceed) = (0.0f64, 0.0, cfg.t_start, 0, 0);
    for (t, s) in &stream {
        let out = if cfg.emit_all_spreads {
            fusion::fuse_with_spreads(&s.measurements, &cfg.fusion)?
        } else {
            fusion::fuse(&s.measurements, &cfg.fusion)?
        };
        let err = out.fused_value - s.true_value;
        if err.abs() > max_err {
            max_err = err.abs();
            time_of_max = *t;
        }
        sum_err += err.abs();
        attacked += usize::from(!s.attacked_set.is_empty());
        if s.attacked_set.len() > cfg.fusion.max_attacked() {
            violations.push(|| format!("t = {t}: attacked set {} exceeds the budget", s.attacked_set));
        }
        if let (Some(b), Some(bounds)) = (bound, &bounds) {
            if err.abs() > b {
                exceed += 1;
                if within_bounds(s, bounds) {
                    violations.push(|| format!("t = {t}: |fusion error| = {} exceeds the bound {b}", err.abs()));
                }
            }
        }
        let mut row = vec![num(*t), num(s.true_value), num(out.fused_value), num(err), out.selected_subset.to_csv_cell()];
        if let Some(all) = &out.all_spreads {
            row.extend(all.iter().map(|(_, pi)| num(*pi)));
        }
        table.rows.push(row);
    }
    let summary = FuseDemoSummary {
        samples: stream.len(),
        attacked_samples: attacked,
        noise_sup: bounds.as_ref().map(NoiseBounds::sup),
        error_bound: bound,
        bound_violations: bound.map(|_| exceed),
        max_abs_fusion_error: max_err,
        mean_abs_fusion_error: sum_err / stream.len() as f64,
        time_of_max,
    };
    Ok(Outcome { result: ExperimentSummary::FuseDemo(summary), violations, tables: vec![table] })
}

fn run_detect(cfg: &ScenarioConfig, trial: u32) -> Result<Outcome> {
    let bounds = cfg.noise.require_bounds()?;
    let thresholds = detection::detection_thresholds(&bounds);
    let stream = sensor_stream(cfg, trial)?;
    let timed: Vec<TimedMeasurement> =
        stream.iter().map(|(t, s)| TimedMeasurement { time: *t, values: s.measurements.clone() }).collect();
    let truth: Vec<SensorSet> = stream.iter().map(|(_, s)| s.attacked_set.clone()).collect();
    let reports = detection::detect_window(&timed, &thresholds, cfg.window_size)?;
    let window_confusion = metrics::window_confusion_stats(&reports, &truth)?;

    let mut violations = Violations::default();
    let mut sample_confusion = ConfusionStats::default();
    let mut table = CsvTable::new("trace.csv", &["t", "window", "detected", "triggering", "attacked"]);
    for (k, (t, s)) in stream.iter().enumerate() {
        let hit = detection::detect_sample(&s.measurements, &thresholds)?;
        let attacked = !s.attacked_set.is_empty();
        let flagged = !hit.is_empty();
        sample_confusion.tally(flagged, attacked);
        if flagged && !attacked && within_bounds(s, &bounds) {
            violations.push(|| format!("t = {t}: alarm without attack while noise is within bounds"));
        }
        table.rows.push(vec![
            num(*t),
            (k / cfg.window_size).to_string(),
            u8::from(flagged).to_string(),
            set_or_zero(&hit),
            set_or_zero(&s.attacked_set),
        ]);
    }

    let summary = DetectSummary {
        samples: stream.len(),
        window_size: cfg.window_size,
        thresholds,
        windows: reports.len(),
        partial_windows: reports.iter().filter(|r| r.partial).count(),
        detected_windows: reports.iter().filter(|r| r.detected).count(),
        attacked_windows: window_confusion.true_positive + window_confusion.false_negative,
        window_detection_rate: window_confusion.true_positive_rate(),
        window_false_alarm_rate: window_confusion.false_positive_rate(),
        first_detection_time: reports.iter().find_map(|r| r.first_trigger_time),
        flagged_samples: sample_confusion.true_positive + sample_confusion.false_positive,
        attacked_samples: sample_confusion.true_positive + sample_confusion.false_negative,
        window_confusion,
        sample_confusion,
    };
    Ok(Outcome { result: ExperimentSummary::Detect(summary), violations, tables: vec![table] })
}

fn selector(policy: ReferencePolicy, seed: u64, trial: u32, channel: u32) -> ReferenceSelector {
    match policy {
        ReferencePolicy::LowestIndex => ReferenceSelector::LowestIndex,
        ReferencePolicy::SeededRandom => {
            ReferenceSelector::SeededRandom(scenario::make_rng_stream(seed, platoon::stream_id(trial, channel)))
        }
    }
}

/// Running isolation tallies shared by the isolate and platoon experiments.
#[derive(Default)]
struct IsolationTally {
    attacked_instants: usize,
    successes: usize,
    exact: usize,
    clean_reference: usize,
    clean_false_positives: usize,
}

impl IsolationTally {
    fn record(&mut self, isolated: &SensorSet, reference: usize, attacked: &SensorSet) -> usize {
        if !attacked.is_empty() {
            self.attacked_instants += 1;
            self.successes += usize::from(attacked.iter().all(|i| isolated.contains(i)));
            self.exact += usize::from(isolated == attacked);
        }
        if attacked.contains(reference) {
            return 0;
        }
        self.clean_reference += 1;
        let fp = isolated.iter().filter(|i| !attacked.contains(*i)).count();
        self.clean_false_positives += fp;
        fp
    }

    fn rate(&self, n: usize) -> Option<f64> {
        (self.attacked_instants > 0).then(|| n as f64 / self.attacked_instants as f64)
    }
}

fn run_isolate(cfg: &ScenarioConfig, trial: u32) -> Result<Outcome> {
    let bounds = cfg.noise.require_bounds()?;
    let stream = sensor_stream(cfg, trial)?;
    let mut sel = selector(cfg.reference_policy, cfg.seed, trial, SELECTOR_CHANNEL);
    let mut table =
        CsvTable::new("trace.csv", &["t", "d_true", "d_hat", "sigma", "reference_sensor", "isolated", "attacked"]);
    let mut tally = IsolationTally::default();
    let mut violations = Violations::default();
    let (mut predicted, mut truth) = (Vec::new(), Vec::new());
    let mut max_err = 0.0f64;
    for (t, s) in &stream {
        let out = fusion::fuse(&s.measurements, &cfg.fusion)?;
        max_err = max_err.max((out.fused_value - s.true_value).abs());
        let iso = detection::isolate(*t, &s.measurements, &out, &bounds, &mut sel)?;
        let fp = tally.record(&iso.isolated_set, iso.reference_sensor, &s.attacked_set);
        if fp > 0 && within_bounds(s, &bounds) {
            violations.push(|| {
                format!("t = {t}: attack-free sensors isolated against clean reference {}", iso.reference_sensor)
            });
        }
        table.rows.push(vec![
            num(*t),
            num(s.true_value),
            num(out.fused_value),
            out.selected_subset.to_csv_cell(),
            iso.reference_sensor.to_string(),
            set_or_zero(&iso.isolated_set),
            set_or_zero(&s.attacked_set),
        ]);
        predicted.push(iso.isolated_set);
        truth.push(s.attacked_set.clone());
    }
    let summary = IsolateSummary {
        instants: stream.len(),
        reference_policy: cfg.reference_policy,
        attacked_instants: tally.attacked_instants,
        isolation_success_rate: tally.rate(tally.successes),
        exact_isolation_rate: tally.rate(tally.exact),
        clean_reference_instants: tally.clean_reference,
        false_positives_with_clean_reference: tally.clean_false_positives,
        sensor_confusion: metrics::confusion_stats(&predicted, &truth, cfg.fusion.n_sensors())?,
        max_abs_fusion_error: max_err,
    };
    Ok(Outcome { result: ExperimentSummary::Isolate(summary), violations, tables: vec![table] })
}

/// Builds the simulator input for a platoon configuration.
pub fn platoon_scenario(cfg: &ScenarioConfig, trial: u32) -> Result<PlatoonScenario> {
    let setup = cfg.platoon.as_ref().ok_or_else(|| FusionError::Config("missing platoon section".into()))?;
    let monitor = if setup.monitor {
        Some(LoopMonitor { bounds: cfg.noise.require_bounds()?, reference_policy: cfg.reference_policy })
    } else {
        None
    };
    Ok(PlatoonScenario {
        params: setup.params,
        input: setup.input.clone(),
        negate_input: cfg.negate_platoon_input,
        sensors: SensorBank { fusion: cfg.fusion, noise: cfg.noise.clone(), attack: cfg.attack.clone() },
        channel_noise: setup.channel_noise,
        fused_from_vehicle: setup.fused_from_vehicle,
        monitor,
        dt: cfg.dt,
        horizon: cfg.horizon,
        seed: cfg.seed,
        trial,
    })
}

fn run_platoon(cfg: &ScenarioConfig, trial: u32) -> Result<Outcome> {
    let setup = cfg.platoon.as_ref().ok_or_else(|| FusionError::Config("missing platoon section".into()))?;
    let sc = platoon_scenario(cfg, trial)?;
    let traj = platoon::simulate_platoon(&sc)?;
    let m = traj.vehicles();
    let bounds = cfg.noise.bounds();
    let bound = bounds.as_ref().map(|b| fusion::theoretical_error_bound(b.sup())).transpose()?;
    let mut violations = Violations::default();

    let header = ["t", "vehicle", "e", "v", "a", "u", "d_true", "d_hat", "fusion_error"];
    let mut long = CsvTable::new("trace.csv", &header);
    let mut per_vehicle_tables: Vec<CsvTable> =
        (0..=m).map(|i| CsvTable::new(format!("trace_vehicle_{i}.csv"), &header)).collect();
    for (k, t) in traj.times.iter().enumerate() {
        for (i, table) in per_vehicle_tables.iter_mut().enumerate() {
            let x = traj.states[i][k];
            let (d_true, d_hat, err) = if i == 0 {
                (String::new(), String::new(), String::new())
            } else {
                match &traj.fusion[i - 1][k] {
                    Some(r) => (num(traj.spacing[i - 1][k]), num(r.d_hat), num(r.fusion_error)),
                    None => (num(traj.spacing[i - 1][k]), String::new(), String::new()),
                }
            };
            let row = vec![num(*t), i.to_string(), num(x.e), num(x.v), num(x.a), num(x.u), d_true, d_hat, err];
            table.rows.push(row.clone());
            long.rows.push(row);
        }
    }

    let mut per_vehicle = Vec::with_capacity(m);
    let mut exceed = 0;
    let mut max_fusion: Option<f64> = None;
    let mut velocity_traces = Vec::with_capacity(m);
    let (mut flagged, mut fused_samples, mut attacked_samples) = (0, 0, 0);
    let mut tally = IsolationTally::default();
    for i in 1..=m {
        let states = &traj.states[i];
        let max_abs_state = states.iter().map(|x| x.max_abs()).fold(0.0, f64::max);
        if max_abs_state >= setup.state_ceiling {
            violations.push(|| format!("vehicle {i}: sup |x| = {max_abs_state} reaches the ceiling {}", setup.state_ceiling));
        }
        let velocity = SignalTrace::uniform(0.0, cfg.dt, traj.channel(i, |x| x.v), format!("v{i}"))?;
        let mut vehicle_max_fusion: Option<f64> = None;
        for (k, rec) in traj.fusion[i - 1].iter().enumerate() {
            let Some(r) = rec else { continue };
            let err = r.fusion_error.abs();
            vehicle_max_fusion = Some(vehicle_max_fusion.map_or(err, |m| m.max(err)));
            if let Some(b) = bound {
                if err > b {
                    exceed += 1;
                    let t = traj.times[k];
                    violations.push(|| format!("vehicle {i}, t = {t}: |fusion error| = {err} exceeds the bound {b}"));
                }
            }
            fused_samples += 1;
            attacked_samples += usize::from(!r.attacked.is_empty());
            if let Some(d) = &r.detected {
                flagged += usize::from(!d.is_empty());
            }
            if let Some(iso) = &r.isolation {
                tally.record(&iso.isolated_set, iso.reference_sensor, &r.attacked);
            }
        }
        if let Some(v) = vehicle_max_fusion {
            max_fusion = Some(max_fusion.map_or(v, |m| m.max(v)));
        }
        per_vehicle.push(VehicleSummary {
            vehicle: i,
            fused: i >= setup.fused_from_vehicle,
            max_abs_state,
            max_abs_spacing_error: states.iter().map(|x| x.e.abs()).fold(0.0, f64::max),
            terminal_spacing_error: traj.terminal(i).e,
            velocity_l2: metrics::lp_norm(&velocity, Norm::L2),
            max_abs_fusion_error: vehicle_max_fusion,
        });
        velocity_traces.push(velocity);
    }
    let monitor = sc.monitor.as_ref().map(|_| MonitorSummary {
        fused_samples,
        attacked_samples,
        flagged_samples: flagged,
        isolation_success_rate: tally.rate(tally.successes),
        false_positives_with_clean_reference: tally.clean_false_positives,
    });
    let summary = PlatoonSummary {
        vehicles: m,
        instants: traj.times.len(),
        max_real_eigenvalue: traj.max_real_eigenvalue,
        hurwitz: traj.hurwitz(),
        warnings: traj.warnings.clone(),
        state_ceiling: setup.state_ceiling,
        max_abs_state: per_vehicle.iter().map(|v| v.max_abs_state).fold(0.0, f64::max),
        velocity_string_stability: metrics::string_stability_check(&velocity_traces, Norm::L2, 0.01)?,
        fusion_error_bound: bound,
        bound_violations: bound.map(|_| exceed),
        max_abs_fusion_error: max_fusion,
        monitor,
        per_vehicle,
    };
    let mut tables = vec![long];
    tables.extend(per_vehicle_tables);
    Ok(Outcome { result: ExperimentSummary::Platoon(summary), violations, tables })
}

fn aggregate(name: &str, values: &[Option<f64>]) -> MetricAggregate {
    let seen: Vec<f64> = values.iter().flatten().copied().collect();
    let n = seen.len();
    MetricAggregate {
        name: name.to_string(),
        trials_reported: n,
        mean: (n > 0).then(|| seen.iter().sum::<f64>() / n as f64),
        min: seen.iter().copied().reduce(f64::min),
        max: seen.iter().copied().reduce(f64::max),
    }
}

fn run_montecarlo(cfg: &ScenarioConfig) -> Result<Outcome> {
    let trials = u32::try_from(cfg.trials).map_err(|_| FusionError::Config("too many trials".into()))?;
    // collected in trial order, so the summary does not depend on scheduling
    let outcomes: Vec<Outcome> =
        (0..trials).into_par_iter().map(|trial| run_single(cfg, cfg.inner, trial)).collect::<Result<_>>()?;

    let mut violations = Violations::default();
    let per_trial: Vec<TrialOutcome> = outcomes
        .iter()
        .enumerate()
        .map(|(trial, o)| {
            for msg in &o.violations.messages {
                violations.push(|| format!("trial {trial}: {msg}"));
            }
            // messages beyond the per-trial cap still count
            violations.count += o.violations.count - o.violations.messages.len();
            TrialOutcome {
                trial: trial as u32,
                stream_id: platoon::stream_id(trial as u32, 0),
                metrics: o.result.headline(), invariant_violations: o.violations.count }
        })
        .collect();

    let names: Vec<String> = per_trial.first().map(|t| t.metrics.keys().cloned().collect()).unwrap_or_default();
    let metrics: Vec<MetricAggregate> = names
        .iter()
        .map(|name| aggregate(name, &per_trial.iter().map(|t| t.metrics[name]).collect::<Vec<_>>()))
        .collect();

    let mut header = vec!["trial".to_string()];
    header.extend(names.iter().cloned());
    header.push("invariant_violations".into());
    let mut table = CsvTable { file_name: "trace.csv".into(), header, rows: Vec::new() };
    for t in &per_trial {
        let mut row = vec![t.trial.to_string()];
        row.extend(names.iter().map(|n| t.metrics[n].map(num).unwrap_or_default()));
        row.push(t.invariant_violations.to_string());
        table.rows.push(row);
    }

    let summary = MonteCarloSummary {
        inner: cfg.inner,
        trials: cfg.trials,
        metrics,
        total_invariant_violations: violations.count,
        per_trial,
    };
    Ok(Outcome { result: ExperimentSummary::Montecarlo(summary), violations, tables: vec![table] })
}
