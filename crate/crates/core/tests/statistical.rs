//! Statistical and cross-module properties on the synthetic benchmark.

use proptest::prelude::*;
use utilgate_core::{
    accuracy, argmax_classes, fit_auto, fit_decay, fit_interpolant, gen_blobs_logits, perturb_global,
    perturb_region, perturb_targeted, run_sweep, seed_for, BlobsSpec, CalibrationRow, CalibrationTable,
    LabelBatch, LogitsBatch, MetricKind, NoiseStream, PerturbationMode, PerturbationSpec, SweepEcho,
    SweepPlan, Tensor, Tier, TierPolicy,
};

fn blobs(separation: f64, per_class: usize, seed: u64) -> (LogitsBatch, LabelBatch) {
    gen_blobs_logits(&BlobsSpec {
        classes: 10,
        samples_per_class: per_class,
        separation,
        feature_dim: 10,
        seed,
    })
    .unwrap()
}

fn acc(logits: &LogitsBatch, labels: &LabelBatch) -> f64 {
    accuracy(&argmax_classes(logits), labels).unwrap().value
}

fn mean_accuracy(logits: &LogitsBatch, labels: &LabelBatch, sigma: f64, trials: u32, base: u64) -> f64 {
    (0..trials)
        .map(|t| acc(&perturb_global(logits, &PerturbationSpec::global(sigma, seed_for(base, 0, t))).unwrap(), labels))
        .sum::<f64>()
        / trials as f64
}

#[test]
fn targeted_noise_only_grows_the_error_set() {
    let (logits, labels) = blobs(3.0, 50, 21);
    let wrong_before: Vec<bool> = argmax_classes(&logits)
        .values()
        .iter()
        .zip(labels.values())
        .map(|(p, t)| p != t)
        .collect();
    let before = acc(&logits, &labels);
    for seed in 0..100 {
        let spec = PerturbationSpec::new(PerturbationMode::TargetedNoise, 1.0, seed);
        let out = perturb_targeted(&logits, &labels, &spec).unwrap();
        let pred = argmax_classes(&out);
        for (i, &wrong) in wrong_before.iter().enumerate() {
            if wrong {
                assert_ne!(pred.values()[i], labels.values()[i], "seed {seed} sample {i}");
            }
        }
        assert!(acc(&out, &labels) <= before);
    }
}

#[test]
fn chance_level_at_huge_sigma() {
    let (logits, labels) = blobs(5.0, 100, 3);
    let mean = mean_accuracy(&logits, &labels, 5000.0, 100, 17);
    assert!((mean - 0.10).abs() <= 0.02, "{mean}");
}

#[test]
fn mean_accuracy_non_increasing_in_sigma() {
    let (logits, labels) = blobs(4.0, 50, 5);
    let grid = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
    let means: Vec<f64> = grid.iter().map(|&s| mean_accuracy(&logits, &labels, s, 100, 9)).collect();
    for w in means.windows(2) {
        assert!(w[1] <= w[0] + 0.005, "{means:?}");
    }
}

#[test]
fn calibration_sweep_descends_towards_chance() {
    // N = 2000, K = 10, clean accuracy near 0.95
    let (logits, labels) = blobs(4.75, 200, 11);
    let clean = acc(&logits, &labels);
    assert!((clean - 0.95).abs() < 0.02, "{clean}");
    let plan = SweepPlan::new(vec![0.5, 1.0, 2.0, 4.0, 8.0, 16.0], 50, 4, PerturbationMode::Global, MetricKind::Accuracy)
        .unwrap();
    let table = run_sweep(&logits, &labels, &plan).unwrap();
    let means: Vec<f64> = table.summary().iter().map(|s| s.mean).collect();
    assert_eq!(means[0], clean);
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
    // squared-distance logits separate classes by about s^2 ~ 22 units, so
    // chance needs sigma well beyond 16
    let far = SweepPlan::new(vec![2000.0], 50, 4, PerturbationMode::Global, MetricKind::Accuracy).unwrap();
    let top = run_sweep(&logits, &labels, &far).unwrap().summary()[1].mean;
    assert!((top - 0.10).abs() <= 0.02, "{top}");
}

fn noisy_table(a: f64, b: f64, c: f64, trials: u32, s: &mut NoiseStream) -> CalibrationTable {
    let grid = [0.0, 0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0];
    let mut rows = Vec::new();
    for sigma in grid {
        for trial in 0..trials {
            let value = (a * (-b * sigma).exp() + c + 0.01 * s.next_gaussian()).clamp(0.0, 1.0);
            rows.push(CalibrationRow { sigma, trial, value });
        }
    }
    CalibrationTable::from_rows(SweepEcho::new(MetricKind::Miou, trials), rows).unwrap()
}

#[test]
fn noisy_reference_curve_recovered_within_five_percent() {
    let mut s = NoiseStream::new(0xf17);
    for replicate in 0..100 {
        let fit = fit_decay(&noisy_table(0.85, 1.3, 0.10, 50, &mut s)).unwrap();
        for (got, want) in [(fit.a(), 0.85), (fit.b(), 1.3), (fit.c(), 0.10)] {
            assert!((got - want).abs() / want <= 0.05, "replicate {replicate}: {got} vs {want}");
        }
        assert!(fit.rmse() <= 0.015, "replicate {replicate}: rmse {}", fit.rmse());
    }
}

#[test]
fn interpolant_inverts_at_table_sigmas() {
    let mut s = NoiseStream::new(2);
    let table = noisy_table(0.7, 0.9, 0.2, 20, &mut s);
    let f = fit_interpolant(&table).unwrap();
    for (&sigma, &value) in f.sigmas().iter().zip(f.values()) {
        // pooled plateaus resolve to their smallest sigma
        let sol = f.solve_sigma(value).unwrap();
        assert!(sol.sigma <= sigma + 1e-9);
        assert!((f.predict(sol.sigma) - value).abs() < 1e-9);
    }
}

#[test]
fn tiers_attain_targets_on_held_out_blobs() {
    let (cal_x, cal_y) = blobs(4.0, 100, 31);
    let (test_x, test_y) = blobs(4.0, 100, 32);
    let grid = vec![1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0];
    let plan = SweepPlan::new(grid, 50, 8, PerturbationMode::Global, MetricKind::Accuracy).unwrap();
    let curve = fit_auto(&run_sweep(&cal_x, &cal_y, &plan).unwrap()).unwrap();
    let policy = TierPolicy::new(
        vec![Tier::new("free", 0.4), Tier::new("basic", 0.6), Tier::new("pro", 0.8)],
        MetricKind::Accuracy,
        curve,
        77,
    )
    .unwrap();
    let mut achieved = Vec::new();
    for tier in policy.tiers() {
        let mean = (0..50)
            .map(|request| acc(&policy.apply_tier(&tier.name, &test_x, request).unwrap(), &test_y))
            .sum::<f64>()
            / 50.0;
        assert!((mean - tier.target).abs() <= 0.03, "{}: {mean}", tier.name);
        achieved.push(mean);
    }
    assert!(achieved.windows(2).all(|w| w[1] + 0.01 >= w[0]), "{achieved:?}");
}

#[test]
fn distinct_requests_get_distinct_noise() {
    let (logits, _) = blobs(4.0, 2, 1);
    let curve = fit_auto(&noisy_table(0.8, 1.0, 0.1, 5, &mut NoiseStream::new(4))).unwrap();
    let policy = TierPolicy::new(vec![Tier::new("free", 0.3)], MetricKind::Accuracy, curve, 5).unwrap();
    for pair in 0..1000u64 {
        let a = policy.apply_tier("free", &logits, 2 * pair).unwrap();
        let b = policy.apply_tier("free", &logits, 2 * pair + 1).unwrap();
        assert!(!a.bit_eq(&b), "pair {pair}");
    }
}

fn seg_logits(k: usize, h: usize, w: usize, seed: u64) -> LogitsBatch {
    let mut s = NoiseStream::new(seed);
    LogitsBatch::segmentation(k, h, w, (0..k * h * w).map(|_| (3.0 * s.next_gaussian()) as f32).collect()).unwrap()
}

proptest! {
    #[test]
    fn masks_agree_where_they_agree(
        k in 2usize..5, h in 1usize..8, w in 1usize..8, seed in any::<u64>(),
        m1 in proptest::collection::vec(0u8..=4, 64), m2 in proptest::collection::vec(0u8..=4, 64),
    ) {
        let logits = seg_logits(k, h, w, seed);
        let to_mask = |m: &[u8]| Tensor::from_f32(vec![h, w], m[..h * w].iter().map(|&v| v as f32 / 4.0).collect()).unwrap();
        let spec = PerturbationSpec::new(PerturbationMode::Region, 1.5, seed);
        let a = perturb_region(&logits, &to_mask(&m1), &spec).unwrap();
        let b = perturb_region(&logits, &to_mask(&m2), &spec).unwrap();
        let plane = h * w;
        for i in 0..k * plane {
            if m1[i % plane] == m2[i % plane] {
                prop_assert_eq!(a.values()[i].to_bits(), b.values()[i].to_bits());
            }
        }
    }

    #[test]
    fn equal_effective_sigma_is_bit_identical(sigma in 0.0f64..10.0, delta in 0.25f64..4.0, seed in any::<u64>()) {
        let logits = seg_logits(3, 4, 5, seed);
        // powers of two keep delta * sigma exact
        let scale = 2f64.powi((delta.log2().round()) as i32);
        let a = perturb_global(&logits, &PerturbationSpec::global(sigma, seed).with_delta(scale)).unwrap();
        let b = perturb_global(&logits, &PerturbationSpec::global(sigma * scale, seed)).unwrap();
        prop_assert!(a.bit_eq(&b));
    }

    #[test]
    fn targeted_modes_never_touch_wrong_samples(
        n in 1usize..30, k in 2usize..6, seed in any::<u64>(), sigma in 0.0f64..8.0, flip in any::<bool>(),
    ) {
        let mut s = NoiseStream::new(seed);
        let logits = LogitsBatch::classification(n, k, (0..n * k).map(|_| s.next_gaussian() as f32).collect()).unwrap();
        let labels = LabelBatch::classification((0..n).map(|_| (s.next_uniform() * k as f64) as i32 % k as i32).collect()).unwrap();
        let mode = if flip { PerturbationMode::TargetedFlip } else { PerturbationMode::TargetedNoise };
        let out = perturb_targeted(&logits, &labels, &PerturbationSpec::new(mode, sigma, seed)).unwrap();
        let before = argmax_classes(&logits);
        let after = argmax_classes(&out);
        for i in 0..n {
            let row = i * k..(i + 1) * k;
            if before.values()[i] != labels.values()[i] {
                prop_assert!(logits.values()[row.clone()].iter().zip(&out.values()[row]).all(|(x, y)| x.to_bits() == y.to_bits()));
            } else if flip && sigma > 0.0 {
                prop_assert_ne!(after.values()[i], labels.values()[i]);
            }
        }
    }
}
