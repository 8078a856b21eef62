//! Ground truth, sensor noise and attack generation.
//!
//! Every random draw comes from an explicit [`RngStream`]. A stream is keyed
//! by a master seed and a stream id, so a trial or a vehicle can be replayed
//! in isolation.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detection::NoiseBounds;
use crate::error::{FusionError, Result};
use crate::fusion::{MeasurementVector, SensorSet};

/// Generator behind every stream.
pub type RngStream = ChaCha8Rng;

/// Name recorded in run metadata.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.9; seed_from_u64 + set_stream)";

/// Reproducible stream for `(master_seed, stream_id)`. ChaCha is counter
/// based, so distinct ids address disjoint keystreams.
pub fn make_rng_stream(master_seed: u64, stream_id: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_id);
    rng
}

/// Exogenous spacing signal for standalone fusion experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GroundTruth {
    Constant {
        offset: f64,
    },
    Sinusoid {
        offset: f64,
        amplitude: f64,
        /// Angular frequency in rad/s.
        omega: f64,
    },
    /// Spacing is reconstructed from the simulated platoon state.
    FromPlatoon,
}

impl GroundTruth {
    /// `None` for [`GroundTruth::FromPlatoon`].
    pub fn value_at(&self, t: f64) -> Option<f64> {
        match *self {
            Self::Constant { offset } => Some(offset),
            Self::Sinusoid { offset, amplitude, omega } => Some(offset + amplitude * (omega * t).sin()),
            Self::FromPlatoon => None,
        }
    }
}

/// Distribution of one noise channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseDistribution {
    None,
    /// Uniform on `[-bound, bound]`.
    Uniform { bound: f64 },
    Gaussian { mean: f64, std_dev: f64 },
}

impl NoiseDistribution {
    pub fn validate(&self) -> std::result::Result<(), String> {
        match *self {
            Self::None => Ok(()),
            Self::Uniform { bound } if bound.is_finite() && bound >= 0.0 => Ok(()),
            Self::Uniform { bound } => Err(format!("uniform bound must be finite and >= 0, got {bound}")),
            Self::Gaussian { mean, std_dev } if mean.is_finite() && std_dev.is_finite() && std_dev >= 0.0 => {
                Ok(())
            }
            Self::Gaussian { mean, std_dev } => {
                Err(format!("gaussian needs finite mean and std_dev >= 0, got ({mean}, {std_dev})"))
            }
        }
    }

    /// Almost-sure bound on `|sample|`, when the distribution has one.
    pub fn almost_sure_bound(&self) -> Option<f64> {
        match *self {
            Self::None => Some(0.0),
            Self::Uniform { bound } => Some(bound),
            Self::Gaussian { .. } => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::None => 0.0,
            Self::Uniform { bound } => rng.random_range(-bound..=bound),
            Self::Gaussian { mean, std_dev } => Normal::new(mean, std_dev)
                .expect("validated gaussian parameters")
                .sample(rng),
        }
    }
}

/// Per-sensor noise plus optionally declared bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub per_sensor: Vec<NoiseDistribution>,
    /// Explicit bounds; required for detection when any channel is gaussian.
    pub declared_bounds: Option<Vec<f64>>,
}

impl NoiseModel {
    pub fn none(n: usize) -> Self {
        Self { per_sensor: vec![NoiseDistribution::None; n], declared_bounds: None }
    }

    pub fn uniform(bounds: &[f64]) -> Self {
        Self {
            per_sensor: bounds.iter().map(|&bound| NoiseDistribution::Uniform { bound }).collect(),
            declared_bounds: None,
        }
    }

    pub fn len(&self) -> usize {
        self.per_sensor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_sensor.is_empty()
    }

    /// Declared bounds if present, otherwise the almost-sure bounds of the
    /// distributions. `None` when some channel has no bound and nothing was
    /// declared.
    pub fn bounds(&self) -> Option<NoiseBounds> {
        let raw = match &self.declared_bounds {
            Some(b) => b.clone(),
            None => self
                .per_sensor
                .iter()
                .map(NoiseDistribution::almost_sure_bound)
                .collect::<Option<Vec<_>>>()?,
        };
        NoiseBounds::new(raw).ok()
    }

    /// Like [`NoiseModel::bounds`], but an error in the unknown-bounds regime.
    pub fn require_bounds(&self) -> Result<NoiseBounds> {
        self.bounds().ok_or_else(|| {
            FusionError::Config(
                "noise bounds are unknown: declare `declared_bounds` for non-uniform noise".into(),
            )
        })
    }
}

/// Distribution of injected attack values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AttackValue {
    Gaussian { mean: f64, std_dev: f64 },
    Constant { value: f64 },
}

impl AttackValue {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Gaussian { mean, std_dev } => Normal::new(mean, std_dev)
                .expect("validated gaussian parameters")
                .sample(rng),
            Self::Constant { value } => value,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        match *self {
            Self::Gaussian { mean, std_dev } if mean.is_finite() && std_dev.is_finite() && std_dev >= 0.0 => {
                Ok(())
            }
            Self::Gaussian { mean, std_dev } => {
                Err(format!("attack gaussian needs finite mean and std_dev >= 0, got ({mean}, {std_dev})"))
            }
            Self::Constant { value } if value.is_finite() => Ok(()),
            Self::Constant { value } => Err(format!("attack constant must be finite, got {value}")),
        }
    }
}

/// Which sensors are attacked at a given instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AttackKind {
    None,
    FixedSet { sensors: SensorSet },
    /// A fresh uniformly drawn size-`q` subset at every instant.
    RotatingUniform,
}

/// Attack rule producing `W(t)` and `eta(t)` under the budget `card(W) <= q`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSchedule {
    pub kind: AttackKind,
    pub budget: usize,
    pub value: AttackValue,
}

impl AttackSchedule {
    pub fn none() -> Self {
        Self { kind: AttackKind::None, budget: 0, value: AttackValue::Constant { value: 0.0 } }
    }

    /// Checks the schedule against a bank of `n` sensors.
    pub fn validate(&self, n: usize) -> Result<()> {
        if let AttackKind::FixedSet { sensors } = &self.kind {
            sensors.check_range(n).map_err(|e| FusionError::Config(e.to_string()))?;
            if sensors.len() > self.budget {
                return Err(FusionError::Config(format!(
                    "fixed attacked set {sensors} exceeds the budget q = {}",
                    self.budget
                )));
            }
        }
        if self.budget > n {
            return Err(FusionError::Config(format!("attack budget {} exceeds {n} sensors", self.budget)));
        }
        self.value.validate().map_err(FusionError::Config)
    }

    fn draw_set<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> SensorSet {
        match &self.kind {
            AttackKind::None => SensorSet::empty(),
            AttackKind::FixedSet { sensors } => sensors.clone(),
            AttackKind::RotatingUniform => {
                SensorSet::from_indices(index::sample(rng, n, self.budget).into_iter().map(|i| i + 1))
            }
        }
    }
}

/// One simulated sampling instant with full ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSample {
    pub measurements: MeasurementVector,
    pub true_value: f64,
    pub attacked_set: SensorSet,
    pub attack_values: Vec<f64>,
    pub noise_values: Vec<f64>,
}

/// Draws `D_i = d + nu_i + eta_i` for every sensor. Noise is drawn first in
/// sensor order, then the attacked set, then one attack value per attacked
/// sensor in ascending order.
pub fn sample_measurements<R: Rng + ?Sized>(
    truth: f64,
    noise: &NoiseModel,
    attack: &AttackSchedule,
    rng: &mut R,
) -> Result<SensorSample> {
    let n = noise.len();
    attack.validate(n)?;
    let noise_values: Vec<f64> = noise.per_sensor.iter().map(|dist| dist.sample(rng)).collect();
    let attacked_set = attack.draw_set(n, rng);
    let mut attack_values = vec![0.0; n];
    for i in attacked_set.iter() {
        attack_values[i - 1] = attack.value.sample(rng);
    }
    let values = noise_values
        .iter()
        .zip(&attack_values)
        .map(|(nu, eta)| truth + nu + eta)
        .collect();
    Ok(SensorSample {
        measurements: MeasurementVector::new(values)?,
        true_value: truth,
        attacked_set,
        attack_values,
        noise_values,
    })
}
