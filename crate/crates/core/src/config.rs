//! JSON scenario files.
//!
//! A file is first read into a [`ConfigDocument`] whose required fields are
//! optional at the serde level, so that validation can report every problem
//! at once instead of stopping at the first missing key. The validated
//! [`ScenarioConfig`] keeps the document it came from; echoing that document
//! and parsing it again reproduces the same configuration exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detection::{ReferencePolicy, DEFAULT_WINDOW_SIZE};
use crate::error::{FusionError, Result};
use crate::fusion::{FusionConfig, SensorSet};
use crate::platoon::{ChannelNoise, Gains, InputSchedule, PlatoonParams, DEFAULT_GAMMA};
use crate::scenario::{AttackKind, AttackSchedule, AttackValue, GroundTruth, NoiseDistribution, NoiseModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    FuseDemo,
    Detect,
    Isolate,
    Platoon,
    Montecarlo,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::FuseDemo => "fuse-demo",
            Self::Detect => "detect",
            Self::Isolate => "isolate",
            Self::Platoon => "platoon",
            Self::Montecarlo => "montecarlo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_attacked: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<Vec<NoiseDistribution>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_bounds: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKindName {
    None,
    FixedSet,
    RotatingUniform,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<AttackKindName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensors: Option<SensorSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<AttackValue>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelNoiseSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<NoiseDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceleration: Option<NoiseDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedforward: Option<NoiseDistribution>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatoonSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehicles: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub headway: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_constant: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standstill: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<Gains>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// `[[start_time, value], ...]` for the reference input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_schedule: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_noise: Option<ChannelNoiseSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused_from_vehicle: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_ceiling: Option<f64>,
    /// Run detection and isolation inside the loop.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitor: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_start: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_policy: Option<ReferencePolicy>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner: Option<ExperimentKind>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negate_platoon_input: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emit_all_spreads: Option<bool>,
}

/// On-disk form of a scenario.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensors: Option<SensorsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub platoon: Option<PlatoonSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub montecarlo: Option<MonteCarloSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flags: Option<FlagsSection>,
}

impl ConfigDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(FusionError::InvalidConfig(vec!["configuration file is empty".into()]));
        }
        serde_json::from_str(text).map_err(|e| FusionError::InvalidConfig(vec![format!("parse error: {e}")]))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config documents always serialize")
    }
}

/// Platoon part of a validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonSetup {
    pub params: PlatoonParams,
    pub input: InputSchedule,
    pub channel_noise: ChannelNoise,
    pub fused_from_vehicle: usize,
    pub state_ceiling: f64,
    pub monitor: bool,
}

/// Default ceiling on `sup_t |x_i(t)|` used for the boundedness check.
pub const DEFAULT_STATE_CEILING: f64 = 1.0e3;

/// Validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub document: ConfigDocument,
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub fusion: FusionConfig,
    pub noise: NoiseModel,
    pub attack: AttackSchedule,
    pub ground_truth: Option<GroundTruth>,
    pub platoon: Option<PlatoonSetup>,
    pub dt: f64,
    pub horizon: f64,
    pub t_start: f64,
    pub window_size: usize,
    pub reference_policy: ReferencePolicy,
    pub trials: usize,
    /// Experiment repeated by a Monte-Carlo run.
    pub inner: ExperimentKind,
    pub output_dir: Option<PathBuf>,
    pub negate_platoon_input: bool,
    pub emit_all_spreads: bool,
}

/// Reads and validates a scenario file.
pub fn parse_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| FusionError::Read { path: path.to_path_buf(), source })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ScenarioConfig> {
    ScenarioConfig::from_document(ConfigDocument::from_json(text)?)
}

fn positive(errors: &mut Vec<String>, name: &str, v: Option<f64>) -> f64 {
    match v {
        Some(x) if x > 0.0 && x.is_finite() => x,
        Some(x) => {
            errors.push(format!("{name} must be positive and finite, got {x}"));
            f64::NAN
        }
        None => {
            errors.push(format!("missing field `{name}`"));
            f64::NAN
        }
    }
}

fn check_noise(errors: &mut Vec<String>, name: &str, d: &NoiseDistribution) {
    if let Err(e) = d.validate() {
        errors.push(format!("{name}: {e}"));
    }
}

impl ScenarioConfig {
    /// Validates a document, collecting every problem found.
    pub fn from_document(document: ConfigDocument) -> Result<Self> {
        let mut errors = Vec::new();
        let doc = &document;

        let experiment = doc.experiment.unwrap_or_else(|| {
            errors.push("missing field `experiment`".into());
            ExperimentKind::FuseDemo
        });
        let seed = doc.seed.unwrap_or_else(|| {
            errors.push("missing field `seed` (or pass --seed)".into());
            0
        });

        let mc = doc.montecarlo.clone().unwrap_or_default();
        let trials = mc.trials.unwrap_or(100);
        if trials == 0 {
            errors.push("montecarlo.trials must be at least 1".into());
        }
        let inner = match (experiment, mc.inner) {
            (_, Some(ExperimentKind::Montecarlo)) => {
                errors.push("montecarlo.inner cannot itself be `montecarlo`".into());
                ExperimentKind::FuseDemo
            }
            (_, Some(kind)) => kind,
            (ExperimentKind::Montecarlo, None) => {
                errors.push("missing field `montecarlo.inner`".into());
                ExperimentKind::FuseDemo
            }
            (kind, None) => kind,
        };
        // the experiment whose input requirements apply
        let effective = if experiment == ExperimentKind::Montecarlo { inner } else { experiment };

        // sensor bank
        let sensors = doc.sensors.clone().unwrap_or_else(|| {
            errors.push("missing section `sensors`".into());
            SensorsSection::default()
        });
        let n = sensors.count.unwrap_or_else(|| {
            if doc.sensors.is_some() {
                errors.push("missing field `sensors.count`".into());
            }
            0
        });
        let q = sensors.max_attacked.unwrap_or_else(|| {
            if doc.sensors.is_some() {
                errors.push("missing field `sensors.max_attacked`".into());
            }
            0
        });
        let fusion = if n == 0 {
            if sensors.count == Some(0) {
                errors.push("sensors.count must be at least 1".into());
            }
            None
        } else {
            match FusionConfig::new(n, q) {
                Ok(cfg) => Some(cfg),
                Err(_) => {
                    errors.push(format!(
                        "sensors.max_attacked = {q} with sensors.count = {n} is not reconstructible: \
                         the spacing can be recovered under arbitrary attacks only if 2q < N \
                         (fewer than half of the sensors attacked)"
                    ));
                    None
                }
            }
        };
        let per_sensor = sensors.noise.clone().unwrap_or_else(|| {
            if doc.sensors.is_some() {
                errors.push("missing field `sensors.noise`".into());
            }
            Vec::new()
        });
        if sensors.noise.is_some() && n > 0 && per_sensor.len() != n {
            errors.push(format!("sensors.noise has {} entries, expected sensors.count = {n}", per_sensor.len()));
        }
        for (i, d) in per_sensor.iter().enumerate() {
            check_noise(&mut errors, &format!("sensors.noise[{i}]"), d);
        }
        if let Some(b) = &sensors.declared_bounds {
            if n > 0 && b.len() != n {
                errors.push(format!("sensors.declared_bounds has {} entries, expected {n}", b.len()));
            }
            if b.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                errors.push("sensors.declared_bounds must be finite and non-negative".into());
            }
        }
        let noise = NoiseModel { per_sensor, declared_bounds: sensors.declared_bounds.clone() };

        // attack schedule
        let attack_section = doc.attack.clone().unwrap_or_default();
        let value = attack_section.value.unwrap_or(AttackValue::Constant { value: 0.0 });
        if let Err(e) = value.validate() {
            errors.push(format!("attack.value: {e}"));
        }
        let kind = match attack_section.kind.unwrap_or(AttackKindName::None) {
            AttackKindName::None => AttackKind::None,
            AttackKindName::RotatingUniform => AttackKind::RotatingUniform,
            AttackKindName::FixedSet => match attack_section.sensors.clone() {
                Some(sensors) => AttackKind::FixedSet { sensors },
                None => {
                    errors.push("attack.kind = fixed-set requires `attack.sensors`".into());
                    AttackKind::None
                }
            },
        };
        if attack_section.kind.is_some_and(|k| k != AttackKindName::None) && attack_section.value.is_none() {
            errors.push("missing field `attack.value`".into());
        }
        if let AttackKind::FixedSet { sensors } = &kind {
            if n > 0 && sensors.check_range(n).is_err() {
                errors.push(format!("attack.sensors {sensors} outside 1..={n}"));
            }
            if sensors.len() > q {
                errors.push(format!("attack.sensors {sensors} exceeds the attack budget q = {q}"));
            }
        }
        let attack = AttackSchedule { kind, budget: q, value };

        // timing
        let timing = doc.timing.clone().unwrap_or_else(|| {
            errors.push("missing section `timing`".into());
            TimingSection::default()
        });
        let (dt, horizon) = if doc.timing.is_some() {
            (positive(&mut errors, "timing.dt", timing.dt), positive(&mut errors, "timing.horizon", timing.horizon))
        } else {
            (f64::NAN, f64::NAN)
        };
        let t_start = timing.t_start.unwrap_or(0.0);
        if !t_start.is_finite() {
            errors.push("timing.t_start must be finite".into());
        }
        if dt.is_finite() && horizon.is_finite() {
            let steps = (horizon / dt).round();
            if ((steps * dt - horizon) / horizon).abs() > 1e-9 {
                errors.push(format!("timing.horizon {horizon} is not an integer multiple of timing.dt {dt}"));
            }
        }

        // detection settings
        let det = doc.detection.clone().unwrap_or_default();
        let window_size = det.window_size.unwrap_or(DEFAULT_WINDOW_SIZE);
        if window_size == 0 {
            errors.push("detection.window_size must be at least 1".into());
        }
        let reference_policy = det.reference_policy.unwrap_or_default();

        let ground_truth = doc.ground_truth.clone();
        let flags = doc.flags.clone().unwrap_or_default();

        // platoon
        let platoon = doc.platoon.as_ref().map(|ps| {
            let defaults = PlatoonParams::default();
            let params = PlatoonParams {
                vehicles: ps.vehicles.unwrap_or(defaults.vehicles),
                headway: ps.headway.unwrap_or(defaults.headway),
                time_constant: ps.time_constant.unwrap_or(defaults.time_constant),
                standstill: ps.standstill.unwrap_or(defaults.standstill),
                gains: ps.gains.unwrap_or_default(),
                gamma: ps.gamma.or(ps.gains.is_none().then_some(DEFAULT_GAMMA)),
            };
            if let Err(list) = params.validate() {
                errors.extend(list.into_iter().map(|e| format!("platoon: {e}")));
            }
            let input = match InputSchedule::new(ps.input_schedule.clone().unwrap_or_default()) {
                Ok(s) => s,
                Err(e) => {
                    errors.push(format!("platoon.input_schedule: {e}"));
                    InputSchedule::zero()
                }
            };
            let cn = ps.channel_noise.clone().unwrap_or_default();
            let channel_noise = ChannelNoise {
                velocity: cn.velocity.unwrap_or(NoiseDistribution::None),
                acceleration: cn.acceleration.unwrap_or(NoiseDistribution::None),
                feedforward: cn.feedforward.unwrap_or(NoiseDistribution::None),
            };
            for (name, d) in [
                ("velocity", channel_noise.velocity),
                ("acceleration", channel_noise.acceleration),
                ("feedforward", channel_noise.feedforward),
            ] {
                check_noise(&mut errors, &format!("platoon.channel_noise.{name}"), &d);
            }
            let state_ceiling = ps.state_ceiling.unwrap_or(DEFAULT_STATE_CEILING);
            if !(state_ceiling > 0.0) {
                errors.push("platoon.state_ceiling must be positive".into());
            }
            PlatoonSetup {
                params,
                input,
                channel_noise,
                fused_from_vehicle: ps.fused_from_vehicle.unwrap_or(2),
                state_ceiling,
                monitor: ps.monitor.unwrap_or(false),
            }
        });

        // per-experiment requirements
        match effective {
            ExperimentKind::FuseDemo | ExperimentKind::Detect | ExperimentKind::Isolate => match &ground_truth {
                None => errors.push(format!("experiment `{}` requires `ground_truth`", effective.name())),
                Some(GroundTruth::FromPlatoon) => errors.push(format!(
                    "ground_truth `from-platoon` is only valid for the platoon experiment, not `{}`",
                    effective.name()
                )),
                Some(_) => {}
            },
            ExperimentKind::Platoon => {
                if platoon.is_none() {
                    errors.push("experiment `platoon` requires a `platoon` section".into());
                }
                if t_start != 0.0 {
                    errors.push("platoon runs start from rest at t = 0; remove timing.t_start".into());
                }
            }
            ExperimentKind::Montecarlo => {}
        }
        let needs_bounds = matches!(effective, ExperimentKind::Detect | ExperimentKind::Isolate)
            || (effective == ExperimentKind::Platoon && platoon.as_ref().is_some_and(|p| p.monitor));
        if needs_bounds && !noise.per_sensor.is_empty() && noise.bounds().is_none() {
            errors.push(format!(
                "experiment `{}` needs known noise bounds: set `sensors.declared_bounds` when any sensor noise is gaussian",
                effective.name()
            ));
        }

        if !errors.is_empty() {
            return Err(FusionError::InvalidConfig(errors));
        }
        Ok(Self {
            experiment,
            seed,
            fusion: fusion.expect("validated"),
            noise,
            attack,
            ground_truth,
            platoon,
            dt,
            horizon,
            t_start,
            window_size,
            reference_policy,
            trials,
            inner,
            output_dir: doc.output.as_ref().and_then(|o| o.dir.clone()),
            negate_platoon_input: flags.negate_platoon_input.unwrap_or(false),
            emit_all_spreads: flags.emit_all_spreads.unwrap_or(false),
            document,
        })
    }

    /// Re-validates with command-line overrides applied to the document.
    pub fn with_overrides(&self, ov: &Overrides) -> Result<Self> {
        let mut doc = self.document.clone();
        if let Some(kind) = ov.experiment {
            if kind == ExperimentKind::Montecarlo && self.experiment != ExperimentKind::Montecarlo {
                let mc = doc.montecarlo.get_or_insert_with(Default::default);
                mc.inner.get_or_insert(self.experiment);
            }
            doc.experiment = Some(kind);
        }
        if let Some(seed) = ov.seed {
            doc.seed = Some(seed);
        }
        if let Some(trials) = ov.trials {
            doc.montecarlo.get_or_insert_with(Default::default).trials = Some(trials);
        }
        if let Some(dir) = &ov.output_dir {
            doc.output.get_or_insert_with(Default::default).dir = Some(dir.clone());
        }
        Self::from_document(doc)
    }

    /// Number of sampling instants, `horizon / dt + 1`.
    pub fn instants(&self) -> usize {
        (self.horizon / self.dt).round() as usize + 1
    }
}

/// Values supplied on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub experiment: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

/// Reads a config file with a seed override applied before validation, so a
/// file without `seed` is accepted when one is supplied.
pub fn parse_config_with(path: &Path, ov: &Overrides) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| FusionError::Read { path: path.to_path_buf(), source })?;
    let mut doc = ConfigDocument::from_json(&text)?;
    if let Some(seed) = ov.seed {
        doc.seed = Some(seed);
    }
    if let Some(kind) = ov.experiment {
        if kind == ExperimentKind::Montecarlo && doc.experiment.is_some_and(|k| k != ExperimentKind::Montecarlo) {
            let inner = doc.experiment;
            let mc = doc.montecarlo.get_or_insert_with(Default::default);
            if mc.inner.is_none() {
                mc.inner = inner;
            }
        }
        doc.experiment = Some(kind);
    }
    if let Some(trials) = ov.trials {
        doc.montecarlo.get_or_insert_with(Default::default).trials = Some(trials);
    }
    if let Some(dir) = &ov.output_dir {
        doc.output.get_or_insert_with(Default::default).dir = Some(dir.clone());
    }
    ScenarioConfig::from_document(doc)
}
