//! Closed-loop CACC platoon with the fusion rule inside the loop.
//!
//! Each follower `i` carries the error state `x_i = (e_i, v_i, a_i, u_i)` and
//! evolves as `x_i' = A_c x_i + B w_i`, where the disturbance vector
//! `w_i = (e_sigma, v_{i-1} + w_v, a_{i-1} + w_a, u_{i-1} + w_u)` couples it to
//! its predecessor. Vehicle 0 is a virtual reference driven by the external
//! input `xi_0`, so the first real vehicle runs the same controller as the
//! rest.
//!
//! The whole platoon is integrated jointly with classical RK4. Sensor noise,
//! channel noise and the fusion error are sampled at each grid instant and
//! held over the step; predecessor states enter every RK4 stage.

use nalgebra::{Complex, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::detection::{self, IsolationReport, NoiseBounds, ReferenceSelector};
use crate::error::{FusionError, Result};
use crate::fusion::{self, FusionConfig, SensorSet};
use crate::scenario::{self, AttackSchedule, NoiseDistribution, NoiseModel, RngStream};

/// Controller gains `K = (k_p, k_d, k_dd)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gains {
    pub kp: f64,
    pub kd: f64,
    pub kdd: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Self { kp: 0.8700, kd: 11.1683, kdd: 0.0009 }
    }
}

/// Attenuation level reported alongside the default gains.
pub const DEFAULT_GAMMA: f64 = 1.5235;

/// Homogeneous platoon parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlatoonParams {
    /// Number of real vehicles `m` (the virtual reference is extra).
    pub vehicles: usize,
    /// Time headway `h` (s).
    pub headway: f64,
    /// Driveline time constant `tau` (s).
    pub time_constant: f64,
    /// Standstill distance `r` (m).
    pub standstill: f64,
    pub gains: Gains,
    /// H-infinity attenuation level; metadata only.
    pub gamma: Option<f64>,
}

impl Default for PlatoonParams {
    fn default() -> Self {
        Self {
            vehicles: 5,
            headway: 0.5,
            time_constant: 0.1,
            standstill: 2.0,
            gains: Gains::default(),
            gamma: Some(DEFAULT_GAMMA),
        }
    }
}

impl PlatoonParams {
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errors = Vec::new();
        if self.vehicles < 2 {
            errors.push(format!("platoon needs at least 2 vehicles, got {}", self.vehicles));
        }
        if !(self.headway > 0.0 && self.headway.is_finite()) {
            errors.push(format!("headway must be positive, got {}", self.headway));
        }
        if !(self.time_constant > 0.0 && self.time_constant.is_finite()) {
            errors.push(format!("time constant must be positive, got {}", self.time_constant));
        }
        if !self.standstill.is_finite() {
            errors.push("standstill distance must be finite".into());
        }
        let g = self.gains;
        if ![g.kp, g.kd, g.kdd].iter().all(|k| k.is_finite()) {
            errors.push("gains must be finite".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    /// Gain conditions for the vehicle-following objective that fail:
    /// `k_p, k_d, k_dd > 0` and `k_d > k_p * tau`.
    pub fn gain_warnings(&self) -> Vec<String> {
        let g = self.gains;
        let mut out = Vec::new();
        for (name, k) in [("k_p", g.kp), ("k_d", g.kd), ("k_dd", g.kdd)] {
            if !(k > 0.0) {
                out.push(format!("{name} = {k} is not positive"));
            }
        }
        if !(g.kd > g.kp * self.time_constant) {
            out.push(format!("k_d = {} does not exceed k_p * tau = {}", g.kd, g.kp * self.time_constant));
        }
        out
    }
}

/// Follower closed-loop matrix `A_c`.
#[rustfmt::skip]
pub fn closed_loop_matrix(p: &PlatoonParams) -> Matrix4<f64> {
    let (h, tau) = (p.headway, p.time_constant);
    let Gains { kp, kd, kdd } = p.gains;
    Matrix4::new(
        0.0, -1.0, -h, 0.0,
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, -1.0 / tau, 1.0 / tau,
        kp / h, -kd / h, -kd - kdd * (h - tau) / (h * tau), -(kdd * h + tau) / (h * tau),
    )
}

/// Follower disturbance matrix `B`.
#[rustfmt::skip]
pub fn disturbance_matrix(p: &PlatoonParams) -> Matrix4<f64> {
    let h = p.headway;
    let Gains { kp, kd, kdd } = p.gains;
    Matrix4::new(
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 0.0,
        kp / h, kd / h, kdd / h, 1.0 / h,
    )
}

/// Virtual reference matrix `A_c0`.
#[rustfmt::skip]
pub fn reference_matrix(p: &PlatoonParams) -> Matrix4<f64> {
    let (h, tau) = (p.headway, p.time_constant);
    Matrix4::new(
        0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, -1.0 / tau, 1.0 / tau,
        0.0, 0.0, 0.0, -1.0 / h,
    )
}

/// Virtual reference input column `B_0 = (0, 0, 0, -1/h)`.
pub fn reference_input(p: &PlatoonParams) -> Vector4<f64> {
    Vector4::new(0.0, 0.0, 0.0, -1.0 / p.headway)
}

/// Error state `(e, v, a, u)` of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct VehicleState {
    pub e: f64,
    pub v: f64,
    pub a: f64,
    pub u: f64,
}

impl VehicleState {
    pub fn new(e: f64, v: f64, a: f64, u: f64) -> Self {
        Self { e, v, a, u }
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.e, self.v, self.a, self.u)
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self { e: s[0], v: s[1], a: s[2], u: s[3] }
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self { e: v[0], v: v[1], a: v[2], u: v[3] }
    }

    pub fn is_finite(&self) -> bool {
        self.e.is_finite() && self.v.is_finite() && self.a.is_finite() && self.u.is_finite()
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> f64 {
        self.e.abs().max(self.v.abs()).max(self.a.abs()).max(self.u.abs())
    }
}

/// Disturbance vector `w_i` driving follower `i`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DisturbanceVector {
    pub fusion_error: f64,
    pub predecessor_velocity: f64,
    pub predecessor_accel: f64,
    pub feedforward: f64,
}

impl DisturbanceVector {
    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.fusion_error, self.predecessor_velocity, self.predecessor_accel, self.feedforward)
    }
}

/// `A_c x + B w`.
pub fn follower_derivative(x: &VehicleState, w: &DisturbanceVector, p: &PlatoonParams) -> VehicleState {
    VehicleState::from_vector(&(closed_loop_matrix(p) * x.to_vector() + disturbance_matrix(p) * w.to_vector()))
}

/// `A_c0 x_0 + B_0 xi_0`.
pub fn reference_derivative(x0: &VehicleState, xi0: f64, p: &PlatoonParams) -> VehicleState {
    VehicleState::from_vector(&(reference_matrix(p) * x0.to_vector() + reference_input(p) * xi0))
}

/// Piecewise-constant external input: a list of `(start_time, value)` with
/// strictly increasing start times. The value at `t` is that of the last
/// segment starting at or before `t`; before the first segment it is zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InputSchedule(Vec<(f64, f64)>);

impl InputSchedule {
    pub fn new(segments: Vec<(f64, f64)>) -> Result<Self> {
        if segments.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(FusionError::Config("input schedule entries must be finite".into()));
        }
        if segments.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(FusionError::Config("input schedule times must be strictly increasing".into()));
        }
        Ok(Self(segments))
    }

    pub fn zero() -> Self {
        Self(Vec::new())
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.0
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.0.iter().take_while(|(start, _)| *start <= t).last().map_or(0.0, |(_, v)| *v)
    }
}

/// Reference vehicle state together with its input schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceState {
    pub state: VehicleState,
    pub input: InputSchedule,
}

impl ReferenceState {
    pub fn derivative(&self, t: f64, p: &PlatoonParams) -> VehicleState {
        reference_derivative(&self.state, self.input.value_at(t), p)
    }
}

/// Scratch space for fixed-step RK4 on a flat state vector.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self { k1: vec![0.0; dim], k2: vec![0.0; dim], k3: vec![0.0; dim], k4: vec![0.0; dim], stage: vec![0.0; dim] }
    }

    /// Advances `y` from `t` to `t + dt` in place. `f(t, y, dy)` writes the
    /// derivative into `dy`.
    pub fn step<F>(&mut self, y: &mut [f64], t: f64, dt: f64, mut f: F) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        if !(dt > 0.0) {
            return Err(FusionError::Domain(format!("step size must be positive, got {dt}")));
        }
        let half = 0.5 * dt;
        f(t, y, &mut self.k1);
        for ((s, y), k) in self.stage.iter_mut().zip(y.iter()).zip(&self.k1) {
            *s = y + half * k;
        }
        f(t + half, &self.stage, &mut self.k2);
        for ((s, y), k) in self.stage.iter_mut().zip(y.iter()).zip(&self.k2) {
            *s = y + half * k;
        }
        f(t + half, &self.stage, &mut self.k3);
        for ((s, y), k) in self.stage.iter_mut().zip(y.iter()).zip(&self.k3) {
            *s = y + dt * k;
        }
        f(t + dt, &self.stage, &mut self.k4);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        match y.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(FusionError::NonFiniteState { time: t + dt, what: format!("component {i}") }),
            None => Ok(()),
        }
    }
}

/// One-shot RK4 step.
pub fn rk4_step<F>(y: &mut [f64], t: f64, dt: f64, f: F) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    Rk4::new(y.len()).step(y, t, dt, f)
}

/// Eigenvalues of `A_c`.
pub fn closed_loop_eigenvalues(p: &PlatoonParams) -> Vec<Complex<f64>> {
    closed_loop_matrix(p).complex_eigenvalues().iter().copied().collect()
}

/// Largest real part over the eigenvalues of `A_c`; negative means Hurwitz.
pub fn eigenvalue_check(p: &PlatoonParams) -> f64 {
    closed_loop_eigenvalues(p).iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Channel noise on the predecessor signals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelNoise {
    pub velocity: NoiseDistribution,
    pub acceleration: NoiseDistribution,
    pub feedforward: NoiseDistribution,
}

impl ChannelNoise {
    pub fn none() -> Self {
        Self {
            velocity: NoiseDistribution::None,
            acceleration: NoiseDistribution::None,
            feedforward: NoiseDistribution::None,
        }
    }
}

/// Detection/isolation run alongside fusion inside the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopMonitor {
    pub bounds: NoiseBounds,
    pub reference_policy: detection::ReferencePolicy,
}

/// Redundant spacing sensors mounted on each fused vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorBank {
    pub fusion: FusionConfig,
    pub noise: NoiseModel,
    pub attack: AttackSchedule,
}

/// Everything `simulate_platoon` needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonScenario {
    pub params: PlatoonParams,
    pub input: InputSchedule,
    /// Flips the sign of `xi_0`.
    pub negate_input: bool,
    pub sensors: SensorBank,
    pub channel_noise: ChannelNoise,
    /// First vehicle index whose spacing goes through the fusion rule; lower
    /// indices see the exact spacing.
    pub fused_from_vehicle: usize,
    pub monitor: Option<LoopMonitor>,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    /// High 32 bits of every stream id used by this run.
    pub trial: u32,
}

/// Stream id for `(trial, channel)`.
pub fn stream_id(trial: u32, channel: u32) -> u64 {
    (u64::from(trial) << 32) | u64::from(channel)
}

const SELECTOR_CHANNEL_OFFSET: u32 = 1 << 16;

/// Fusion-layer outputs of one follower at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionRecord {
    pub d_hat: f64,
    pub fusion_error: f64,
    pub selected: SensorSet,
    pub attacked: SensorSet,
    pub detected: Option<SensorSet>,
    pub isolation: Option<IsolationReport>,
}

/// Recorded run.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonTrajectory {
    pub times: Vec<f64>,
    /// `states[i][k]`: vehicle `i` (0 = virtual reference) at `times[k]`.
    pub states: Vec<Vec<VehicleState>>,
    /// `spacing[i - 1][k]`: true spacing of follower `i`.
    pub spacing: Vec<Vec<f64>>,
    /// `fusion[i - 1][k]`: fusion outputs for follower `i`, when fused.
    pub fusion: Vec<Vec<Option<FusionRecord>>>,
    pub max_real_eigenvalue: f64,
    pub warnings: Vec<String>,
}

impl PlatoonTrajectory {
    pub fn hurwitz(&self) -> bool {
        self.max_real_eigenvalue < 0.0
    }

    pub fn vehicles(&self) -> usize {
        self.states.len() - 1
    }

    /// Final state of vehicle `i`.
    pub fn terminal(&self, i: usize) -> VehicleState {
        *self.states[i].last().expect("non-empty trajectory")
    }

    pub fn channel(&self, i: usize, pick: impl Fn(&VehicleState) -> f64) -> Vec<f64> {
        self.states[i].iter().map(pick).collect()
    }
}

fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) || !(horizon > 0.0 && horizon.is_finite()) {
        return Err(FusionError::Config(format!("need dt > 0 and horizon > 0, got dt={dt}, horizon={horizon}")));
    }
    let steps = (horizon / dt).round();
    if ((steps * dt - horizon) / horizon).abs() > 1e-9 {
        return Err(FusionError::Config(format!("horizon {horizon} is not a multiple of dt {dt}")));
    }
    Ok(steps as usize)
}

/// Number of grid instants (including `t = 0`) for a horizon.
pub fn grid_len(horizon: f64, dt: f64) -> Result<usize> {
    Ok(step_count(horizon, dt)? + 1)
}

/// Simulates the platoon on `t = k * dt`, `k = 0..=horizon/dt`, from rest.
pub fn simulate_platoon(sc: &PlatoonScenario) -> Result<PlatoonTrajectory> {
    let p = &sc.params;
    p.validate().map_err(FusionError::InvalidConfig)?;
    if sc.sensors.fusion.n_sensors() != sc.sensors.noise.len() {
        return Err(FusionError::DimensionMismatch {
            expected: sc.sensors.fusion.n_sensors(),
            actual: sc.sensors.noise.len(),
        });
    }
    sc.sensors.attack.validate(sc.sensors.fusion.n_sensors())?;
    let steps = step_count(sc.horizon, sc.dt)?;
    let m = p.vehicles;

    let max_real_eigenvalue = eigenvalue_check(p);
    let mut warnings: Vec<String> = p.gain_warnings();
    if max_real_eigenvalue >= 0.0 {
        warnings.push(format!(
            "closed-loop matrix is not Hurwitz (max Re = {max_real_eigenvalue}); boundedness is not certified"
        ));
    }

    let a_c = closed_loop_matrix(p);
    let b_d = disturbance_matrix(p);
    let a_0 = reference_matrix(p);
    let b_0 = reference_input(p);
    let sign = if sc.negate_input { -1.0 } else { 1.0 };

    let mut rngs: Vec<RngStream> =
        (1..=m).map(|i| scenario::make_rng_stream(sc.seed, stream_id(sc.trial, i as u32))).collect();
    let mut selectors: Vec<ReferenceSelector> = (1..=m)
        .map(|i| match sc.monitor.as_ref().map(|mon| mon.reference_policy) {
            Some(detection::ReferencePolicy::SeededRandom) => ReferenceSelector::SeededRandom(
                scenario::make_rng_stream(sc.seed, stream_id(sc.trial, SELECTOR_CHANNEL_OFFSET + i as u32)),
            ),
            _ => ReferenceSelector::LowestIndex,
        })
        .collect();
    let thresholds = sc.monitor.as_ref().map(|mon| detection::detection_thresholds(&mon.bounds));

    let mut y = vec![0.0; 4 * (m + 1)];
    let mut held = vec![DisturbanceVector::default(); m + 1];
    let mut rk4 = Rk4::new(y.len());

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = vec![Vec::with_capacity(steps + 1); m + 1];
    let mut spacing = vec![Vec::with_capacity(steps + 1); m];
    let mut fusion_log = vec![Vec::with_capacity(steps + 1); m];

    for k in 0..=steps {
        let t = k as f64 * sc.dt;
        for i in 1..=m {
            let x = VehicleState::from_slice(&y[4 * i..4 * i + 4]);
            let d_true = x.e + p.standstill + p.headway * x.v;
            let rng = &mut rngs[i - 1];
            let record = if i >= sc.fused_from_vehicle {
                let sample = scenario::sample_measurements(d_true, &sc.sensors.noise, &sc.sensors.attack, rng)?;
                let out = fusion::fuse(&sample.measurements, &sc.sensors.fusion)?;
                let (detected, isolation) = match (&sc.monitor, &thresholds) {
                    (Some(mon), Some(tau)) => (
                        Some(detection::detect_sample(&sample.measurements, tau)?),
                        Some(detection::isolate(t, &sample.measurements, &out, &mon.bounds, &mut selectors[i - 1])?),
                    ),
                    _ => (None, None),
                };
                Some(FusionRecord {
                    d_hat: out.fused_value,
                    fusion_error: out.fused_value - d_true,
                    selected: out.selected_subset,
                    attacked: sample.attacked_set,
                    detected,
                    isolation,
                })
            } else {
                None
            };
            held[i] = DisturbanceVector {
                fusion_error: record.as_ref().map_or(0.0, |r| r.fusion_error),
                predecessor_velocity: sc.channel_noise.velocity.sample(rng),
                predecessor_accel: sc.channel_noise.acceleration.sample(rng),
                feedforward: sc.channel_noise.feedforward.sample(rng),
            };
            spacing[i - 1].push(d_true);
            fusion_log[i - 1].push(record);
        }
        times.push(t);
        for (i, rec) in states.iter_mut().enumerate() {
            rec.push(VehicleState::from_slice(&y[4 * i..4 * i + 4]));
        }
        if k == steps {
            break;
        }

        // the input is sampled mid-step so switches on the grid stay exact
        let xi0 = sign * sc.input.value_at(t + 0.5 * sc.dt);
        rk4.step(&mut y, t, sc.dt, |_, s, ds| {
            let x0 = Vector4::from_column_slice(&s[0..4]);
            ds[0..4].copy_from_slice((a_0 * x0 + b_0 * xi0).as_slice());
            for i in 1..=m {
                let x = Vector4::from_column_slice(&s[4 * i..4 * i + 4]);
                let pred = &s[4 * (i - 1)..4 * i];
                let w = held[i];
                let w = Vector4::new(
                    w.fusion_error,
                    pred[1] + w.predecessor_velocity,
                    pred[2] + w.predecessor_accel,
                    pred[3] + w.feedforward,
                );
                ds[4 * i..4 * i + 4].copy_from_slice((a_c * x + b_d * w).as_slice());
            }
        })?;
    }

    Ok(PlatoonTrajectory { times, states, spacing, fusion: fusion_log, max_real_eigenvalue, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{AttackKind, AttackValue};

    fn example_params() -> PlatoonParams {
        PlatoonParams::default()
    }

    fn quiet_scenario() -> PlatoonScenario {
        PlatoonScenario {
            params: example_params(),
            input: InputSchedule::zero(),
            negate_input: false,
            sensors: SensorBank {
                fusion: FusionConfig::new(3, 1).unwrap(),
                noise: NoiseModel::none(3),
                attack: AttackSchedule::none(),
            },
            channel_noise: ChannelNoise::none(),
            fused_from_vehicle: 2,
            monitor: None,
            dt: 0.01,
            horizon: 2.0,
            seed: 1,
            trial: 0,
        }
    }

    #[test]
    fn equilibrium_is_fixed() {
        let p = example_params();
        assert_eq!(follower_derivative(&VehicleState::default(), &DisturbanceVector::default(), &p), VehicleState::default());
        assert_eq!(reference_derivative(&VehicleState::default(), 0.0, &p), VehicleState::default());
    }

    #[test]
    fn follower_derivative_examples() {
        let p = example_params();
        let d = follower_derivative(&VehicleState::new(1.0, 0.0, 0.0, 0.0), &DisturbanceVector::default(), &p);
        assert_eq!((d.e, d.v, d.a), (0.0, 0.0, 0.0));
        assert!((d.u - 1.74).abs() < 1e-12);
        let d = follower_derivative(&VehicleState::new(0.0, 1.0, 0.0, 0.0), &DisturbanceVector::default(), &p);
        assert_eq!((d.e, d.v, d.a), (-1.0, 0.0, 0.0));
        assert!((d.u + 22.3366).abs() < 1e-12);
    }

    #[test]
    fn follower_dynamics_are_linear() {
        let p = example_params();
        let x = VehicleState::new(0.3, -1.7, 2.2, 0.4);
        let w = DisturbanceVector { fusion_error: 0.5, predecessor_velocity: 3.0, predecessor_accel: -0.2, feedforward: 1.1 };
        let x2 = VehicleState::new(0.6, -3.4, 4.4, 0.8);
        let w2 = DisturbanceVector { fusion_error: 1.0, predecessor_velocity: 6.0, predecessor_accel: -0.4, feedforward: 2.2 };
        let d = follower_derivative(&x, &w, &p);
        let d2 = follower_derivative(&x2, &w2, &p);
        assert_eq!(d2, VehicleState::new(2.0 * d.e, 2.0 * d.v, 2.0 * d.a, 2.0 * d.u));
    }

    #[test]
    fn reference_derivative_examples() {
        let p = example_params();
        let d = reference_derivative(&VehicleState::default(), 10.0, &p);
        assert_eq!(d, VehicleState::new(0.0, 0.0, 0.0, -20.0));
        let d = reference_derivative(&VehicleState::new(0.0, 0.0, 0.0, 3.0), 0.0, &p);
        assert_eq!(d.v, 0.0);
        assert!((d.a - 3.0 / p.time_constant).abs() < 1e-12);

        let r = ReferenceState { state: VehicleState::default(), input: InputSchedule::new(vec![(0.0, 10.0), (5.0, 0.0)]).unwrap() };
        assert_eq!(r.derivative(1.0, &p).u, -20.0);
        assert_eq!(r.derivative(6.0, &p).u, 0.0);
    }

    #[test]
    fn input_schedule_lookup() {
        let s = InputSchedule::new(vec![(0.0, 10.0), (5.0, 0.0), (10.0, -10.0), (15.0, 0.0)]).unwrap();
        assert_eq!(s.value_at(-1.0), 0.0);
        assert_eq!(s.value_at(2.5), 10.0);
        assert_eq!(s.value_at(10.005), -10.0);
        assert_eq!(s.value_at(19.0), 0.0);
        assert!(InputSchedule::new(vec![(1.0, 0.0), (1.0, 2.0)]).is_err());
        assert!(InputSchedule::new(vec![(0.0, f64::NAN)]).is_err());
    }

    #[test]
    fn rk4_scalar_decay() {
        let mut y = [1.0];
        rk4_step(&mut y, 0.0, 0.1, |_, s, ds| ds[0] = -s[0]).unwrap();
        assert!((y[0] - (-0.1f64).exp()).abs() < 1e-6);

        let mut z = [0.0; 4];
        rk4_step(&mut z, 0.0, 0.5, |_, s, ds| ds.copy_from_slice(s)).unwrap();
        assert_eq!(z, [0.0; 4]);
    }

    #[test]
    fn rk4_rejects_bad_steps() {
        let mut y = [1.0];
        assert!(rk4_step(&mut y, 0.0, 0.0, |_, _, ds| ds[0] = 0.0).is_err());
        let err = rk4_step(&mut y, 0.0, 1.0, |_, _, ds| ds[0] = f64::INFINITY).unwrap_err();
        assert!(matches!(err, FusionError::NonFiniteState { .. }));
    }

    #[test]
    fn hurwitz_with_default_gains() {
        assert!(eigenvalue_check(&example_params()) < 0.0);
        let zero = PlatoonParams { gains: Gains { kp: 0.0, kd: 0.0, kdd: 0.0 }, ..example_params() };
        let eig = closed_loop_eigenvalues(&zero);
        assert!(eig.iter().any(|z| z.norm() < 1e-12), "{eig:?}");
        assert!(!zero.gain_warnings().is_empty());
        assert!(example_params().gain_warnings().is_empty());
    }

    #[test]
    fn params_validation() {
        assert!(example_params().validate().is_ok());
        let bad = PlatoonParams { vehicles: 1, headway: 0.0, time_constant: -1.0, ..example_params() };
        assert_eq!(bad.validate().unwrap_err().len(), 3);
    }

    #[test]
    fn quiet_platoon_stays_at_rest() {
        let traj = simulate_platoon(&quiet_scenario()).unwrap();
        assert_eq!(traj.times.len(), 201);
        for vehicle in &traj.states {
            assert!(vehicle.iter().all(|x| *x == VehicleState::default()));
        }
        for rec in traj.fusion[1..].iter().flatten() {
            assert_eq!(rec.as_ref().unwrap().fusion_error, 0.0);
        }
        assert!(traj.fusion[0].iter().all(Option::is_none));
    }

    #[test]
    fn grid_must_divide_horizon() {
        let sc = PlatoonScenario { horizon: 1.005, dt: 0.01, ..quiet_scenario() };
        assert!(simulate_platoon(&sc).is_err());
        assert_eq!(grid_len(20.0, 0.01).unwrap(), 2001);
    }

    #[test]
    fn fusion_error_bounded_in_loop() {
        let sc = PlatoonScenario {
            input: InputSchedule::new(vec![(0.0, 10.0), (1.0, 0.0)]).unwrap(),
            sensors: SensorBank {
                fusion: FusionConfig::new(3, 1).unwrap(),
                noise: NoiseModel::uniform(&[0.2, 0.4, 0.6]),
                attack: AttackSchedule {
                    kind: AttackKind::RotatingUniform,
                    budget: 1,
                    value: AttackValue::Gaussian { mean: 0.0, std_dev: 5.0 },
                },
            },
            monitor: Some(LoopMonitor {
                bounds: NoiseBounds::new(vec![0.2, 0.4, 0.6]).unwrap(),
                reference_policy: detection::ReferencePolicy::SeededRandom,
            }),
            ..quiet_scenario()
        };
        let traj = simulate_platoon(&sc).unwrap();
        for rec in traj.fusion.iter().flatten().flatten() {
            assert!(rec.fusion_error.abs() <= 3.0 * 0.6 + 1e-12);
            let iso = rec.isolation.as_ref().unwrap();
            assert!(rec.selected.contains(iso.reference_sensor));
        }
        assert_eq!(traj, simulate_platoon(&sc).unwrap());
    }
}
