use proptest::prelude::*;

use resilient_fusion::detection::{self, NoiseBounds, ReferenceSelector, TimedMeasurement};
use resilient_fusion::fusion::{fuse, fuse_with_spreads, subset_spread, FusionConfig, MeasurementVector, SensorSet};
use resilient_fusion::metrics::{lp_norm, string_stability_check, Norm, SignalTrace};
use resilient_fusion::scenario::{self, AttackKind, AttackSchedule, AttackValue, NoiseModel};

/// `(n, q)` with `2q < n`, `n <= 7`.
fn bank() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=7).prop_flat_map(|n| (Just(n), 0..=(n - 1) / 2))
}

fn readings(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, n)
}

/// Truth, in-bound noise and an attack on at most `q` sensors.
#[derive(Debug, Clone)]
struct Instance {
    n: usize,
    q: usize,
    truth: f64,
    bound: f64,
    noise: Vec<f64>,
    attacked: Vec<usize>,
    attack: Vec<f64>,
}

impl Instance {
    fn measurements(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.truth + self.noise[i] + self.attack[i]).collect()
    }
}

/// Attack styles: random large values, a coordinated shifted consensus, and
/// values parked at the edge of what the noise could explain.
fn instance() -> impl Strategy<Value = Instance> {
    bank()
        .prop_flat_map(|(n, q)| {
            (
                Just(n),
                Just(q),
                -50.0f64..50.0,
                0.01f64..2.0,
                prop::collection::vec(-1.0f64..=1.0, n),
                prop::sample::subsequence((0..n).collect::<Vec<_>>(), 0..=q),
                prop::collection::vec(-100.0f64..100.0, n),
                0u8..3,
                -4.0f64..4.0,
            )
        })
        .prop_map(|(n, q, truth, bound, unit_noise, attacked, raw, style, shift)| {
            let noise: Vec<f64> = unit_noise.iter().map(|u| u * bound).collect();
            let mut attack = vec![0.0; n];
            for &i in &attacked {
                attack[i] = match style {
                    0 => raw[i],
                    1 => shift * bound - noise[i],
                    _ => (2.0 + shift.abs() / 4.0).copysign(shift) * bound,
                };
            }
            Instance { n, q, truth, bound, noise, attacked, attack }
        })
}

fn near_tie(d: &MeasurementVector, cfg: &FusionConfig, rel: f64) -> bool {
    let out = fuse_with_spreads(d, cfg).unwrap();
    let best = out.spread_of_selected;
    out.all_spreads
        .unwrap()
        .iter()
        .filter(|(s, _)| *s != out.selected_subset)
        .any(|(_, p)| (p - best).abs() <= rel * (1.0 + best.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn selected_spread_is_minimal((n, q) in bank(), values in readings(7)) {
        let values = values[..n].to_vec();
        let d = MeasurementVector::new(values).unwrap();
        let cfg = FusionConfig::new(n, q).unwrap();
        let out = fuse_with_spreads(&d, &cfg).unwrap();
        prop_assert_eq!(out.selected_subset.len(), n - q);
        for (subset, spread) in out.all_spreads.as_ref().unwrap() {
            prop_assert!(out.spread_of_selected <= *spread);
            prop_assert_eq!(subset_spread(&d, subset).unwrap(), *spread);
        }
    }

    #[test]
    fn fused_error_within_three_noise_bounds(inst in instance()) {
        let d = MeasurementVector::new(inst.measurements()).unwrap();
        let out = fuse(&d, &FusionConfig::new(inst.n, inst.q).unwrap()).unwrap();
        let err = (out.fused_value - inst.truth).abs();
        prop_assert!(err <= 3.0 * inst.bound + 1e-9, "error {err} > 3 * {}", inst.bound);
    }

    #[test]
    fn attack_free_error_within_one_noise_bound(inst in instance()) {
        let clean = Instance { attack: vec![0.0; inst.n], attacked: vec![], ..inst };
        let d = MeasurementVector::new(clean.measurements()).unwrap();
        let out = fuse(&d, &FusionConfig::new(clean.n, clean.q).unwrap()).unwrap();
        prop_assert!((out.fused_value - clean.truth).abs() <= clean.bound + 1e-9);
    }

    #[test]
    fn noiseless_fusion_is_exact(inst in instance(), magnitude in prop::collection::vec(1e-3f64..50.0, 7)) {
        let mut attack = vec![0.0; inst.n];
        for (k, &i) in inst.attacked.iter().enumerate() {
            attack[i] = if k % 2 == 0 { magnitude[k] } else { -magnitude[k] };
        }
        let exact = Instance { noise: vec![0.0; inst.n], attack, ..inst };
        let d = MeasurementVector::new(exact.measurements()).unwrap();
        let out = fuse(&d, &FusionConfig::new(exact.n, exact.q).unwrap()).unwrap();
        prop_assert_eq!(out.fused_value, exact.truth);
        prop_assert!(exact.attacked.iter().all(|i| !out.selected_subset.contains(i + 1)));
    }

    #[test]
    fn translation_equivariance((n, q) in bank(), values in readings(7), c in -1e3f64..1e3) {
        let cfg = FusionConfig::new(n, q).unwrap();
        let d = MeasurementVector::new(values[..n].to_vec()).unwrap();
        prop_assume!(!near_tie(&d, &cfg, 1e-9));
        let shifted = MeasurementVector::new(values[..n].iter().map(|v| v + c).collect()).unwrap();
        let a = fuse(&d, &cfg).unwrap();
        let b = fuse(&shifted, &cfg).unwrap();
        prop_assert_eq!(&a.selected_subset, &b.selected_subset);
        prop_assert!((b.fused_value - (a.fused_value + c)).abs() <= 1e-9 * (1.0 + c.abs() + a.fused_value.abs()));
    }

    #[test]
    fn positive_scaling((n, q) in bank(), values in readings(7), alpha in 0.01f64..100.0) {
        let cfg = FusionConfig::new(n, q).unwrap();
        let d = MeasurementVector::new(values[..n].to_vec()).unwrap();
        prop_assume!(!near_tie(&d, &cfg, 1e-9));
        let scaled = MeasurementVector::new(values[..n].iter().map(|v| v * alpha).collect()).unwrap();
        let a = fuse(&d, &cfg).unwrap();
        let b = fuse(&scaled, &cfg).unwrap();
        prop_assert_eq!(&a.selected_subset, &b.selected_subset);
        prop_assert!((b.fused_value - alpha * a.fused_value).abs() <= 1e-9 * alpha * (1.0 + a.fused_value.abs()));
    }

    #[test]
    fn fusion_is_deterministic((n, q) in bank(), values in readings(7)) {
        let cfg = FusionConfig::new(n, q).unwrap();
        let d = MeasurementVector::new(values[..n].to_vec()).unwrap();
        prop_assert_eq!(fuse_with_spreads(&d, &cfg).unwrap(), fuse_with_spreads(&d, &cfg).unwrap());
    }

    #[test]
    fn no_false_alarm_without_attack(inst in instance()) {
        let bounds = NoiseBounds::new(vec![inst.bound; inst.n]).unwrap();
        let clean: Vec<f64> = (0..inst.n).map(|i| inst.truth + inst.noise[i]).collect();
        let d = MeasurementVector::new(clean).unwrap();
        let hit = detection::detect_sample(&d, &detection::detection_thresholds(&bounds)).unwrap();
        prop_assert!(hit.is_empty(), "false alarm {hit}");
    }

    #[test]
    fn isolation_has_no_false_positive_on_clean_reference(inst in instance(), random in any::<bool>(), seed in any::<u64>()) {
        let bounds = NoiseBounds::new(vec![inst.bound; inst.n]).unwrap();
        let d = MeasurementVector::new(inst.measurements()).unwrap();
        let out = fuse(&d, &FusionConfig::new(inst.n, inst.q).unwrap()).unwrap();
        let mut sel = if random {
            ReferenceSelector::SeededRandom(scenario::make_rng_stream(seed, 0))
        } else {
            ReferenceSelector::LowestIndex
        };
        let iso = detection::isolate(0.0, &d, &out, &bounds, &mut sel).unwrap();
        prop_assert!(!iso.isolated_set.contains(iso.reference_sensor));
        prop_assert!(out.selected_subset.contains(iso.reference_sensor));
        if !inst.attacked.contains(&(iso.reference_sensor - 1)) {
            for i in 1..=inst.n {
                if !inst.attacked.contains(&(i - 1)) {
                    prop_assert!(!iso.isolated_set.contains(i), "clean sensor {i} isolated");
                }
            }
        }
    }

    #[test]
    fn larger_thresholds_flag_less(values in readings(5), tau in prop::collection::vec(0.0f64..50.0, 5), extra in prop::collection::vec(0.0f64..10.0, 5)) {
        let d = MeasurementVector::new(values).unwrap();
        let bigger: Vec<f64> = tau.iter().zip(&extra).map(|(t, e)| t + e).collect();
        let small = detection::detect_sample(&d, &tau).unwrap();
        let large = detection::detect_sample(&d, &bigger).unwrap();
        prop_assert!(large.iter().all(|i| small.contains(i)));

        let cfg = FusionConfig::new(5, 2).unwrap();
        let out = fuse(&d, &cfg).unwrap();
        let b_small = NoiseBounds::new(tau.clone()).unwrap();
        let b_large = NoiseBounds::new(bigger).unwrap();
        let iso_small = detection::isolate(0.0, &d, &out, &b_small, &mut ReferenceSelector::LowestIndex).unwrap();
        let iso_large = detection::isolate(0.0, &d, &out, &b_large, &mut ReferenceSelector::LowestIndex).unwrap();
        prop_assert!(iso_large.isolated_set.iter().all(|i| iso_small.isolated_set.contains(i)));
    }

    #[test]
    fn window_is_or_of_samples(stream in prop::collection::vec(readings(3), 1..40), window in 1usize..12, tau in 0.0f64..40.0) {
        let samples: Vec<TimedMeasurement> = stream
            .iter()
            .enumerate()
            .map(|(k, v)| TimedMeasurement { time: k as f64, values: MeasurementVector::new(v.clone()).unwrap() })
            .collect();
        let thresholds = vec![tau; 3];
        let reports = detection::detect_window(&samples, &thresholds, window).unwrap();
        prop_assert_eq!(reports.len(), samples.len().div_ceil(window));
        for (r, chunk) in reports.iter().zip(samples.chunks(window)) {
            let hits: Vec<SensorSet> = chunk.iter().map(|s| detection::detect_sample(&s.values, &thresholds).unwrap()).collect();
            prop_assert_eq!(r.detected, hits.iter().any(|h| !h.is_empty()));
            prop_assert_eq!(&r.triggering_sensors, &SensorSet::from_indices(hits.iter().flat_map(|h| h.iter().collect::<Vec<_>>())));
            prop_assert_eq!(r.partial, chunk.len() < window);
        }
    }

    #[test]
    fn sampling_respects_budget_and_bounds(seed in any::<u64>(), (n, q) in bank(), bound in 0.0f64..3.0) {
        let noise = NoiseModel::uniform(&vec![bound; n]);
        let attack = AttackSchedule {
            kind: AttackKind::RotatingUniform,
            budget: q,
            value: AttackValue::Gaussian { mean: 0.0, std_dev: 5.0 },
        };
        let mut rng = scenario::make_rng_stream(seed, 0);
        let mut replay = scenario::make_rng_stream(seed, 0);
        for _ in 0..20 {
            let s = scenario::sample_measurements(1.0, &noise, &attack, &mut rng).unwrap();
            prop_assert!(s.attacked_set.len() <= q);
            prop_assert!(s.noise_values.iter().all(|v| v.abs() <= bound));
            prop_assert_eq!(s, scenario::sample_measurements(1.0, &noise, &attack, &mut replay).unwrap());
        }
    }

    #[test]
    fn norms_are_homogeneous(values in prop::collection::vec(-10.0f64..10.0, 2..60), k in -6i32..6, alpha in -20.0f64..20.0) {
        let s = SignalTrace::uniform(0.0, 0.01, values, "s").unwrap();
        let pow2 = 2f64.powi(k);
        for p in [Norm::L1, Norm::L2, Norm::LInf] {
            prop_assert_eq!(lp_norm(&s.scaled(pow2), p), pow2 * lp_norm(&s, p));
            prop_assert_eq!(lp_norm(&s.scaled(-pow2), p), pow2 * lp_norm(&s, p));
            let lhs = lp_norm(&s.scaled(alpha), p);
            let rhs = alpha.abs() * lp_norm(&s, p);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }
    }

    #[test]
    fn norms_satisfy_triangle_inequality(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..60)) {
        let a = SignalTrace::uniform(0.0, 0.05, pairs.iter().map(|p| p.0).collect(), "a").unwrap();
        let b = SignalTrace::uniform(0.0, 0.05, pairs.iter().map(|p| p.1).collect(), "b").unwrap();
        let sum = SignalTrace::uniform(0.0, 0.05, pairs.iter().map(|p| p.0 + p.1).collect(), "a+b").unwrap();
        for p in [Norm::L1, Norm::L2, Norm::LInf] {
            prop_assert!(lp_norm(&sum, p) <= lp_norm(&a, p) + lp_norm(&b, p) + 1e-12);
        }
    }

    #[test]
    fn string_verdict_survives_rescaling(traces in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 30), 2..6), k in -8i32..8) {
        let build = |scale: f64| -> Vec<SignalTrace> {
            traces
                .iter()
                .enumerate()
                .map(|(i, v)| SignalTrace::uniform(0.0, 0.1, v.clone(), format!("z{i}")).unwrap().scaled(scale))
                .collect()
        };
        let base = string_stability_check(&build(1.0), Norm::L2, 0.01).unwrap();
        let scaled = string_stability_check(&build(2f64.powi(k)), Norm::L2, 0.01).unwrap();
        for (x, y) in base.pairs.iter().zip(&scaled.pairs) {
            prop_assert_eq!(x.pass, y.pass);
            prop_assert_eq!(x.ratio, y.ratio);
        }
    }
}
