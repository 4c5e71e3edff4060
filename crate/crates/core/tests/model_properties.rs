mod common;

use common::rng;
use mmc_core::metrics::energy_score;
use mmc_core::model::{argmax, entropy, predict, sample_probabilities, softmax, HeadKind, Model, ModelConfig};
use mmc_core::rng::{stream_rng, Stream};
use mmc_core::tasks::{sample_task, DatasetKind, TaskConfig};
use mmc_core::training::{fit, TrainConfig};
use rand::Rng;

#[test]
fn softmax_ignores_a_common_shift() {
    let mut r = rng(1);
    for _ in 0..500 {
        let c = r.random_range(2..8);
        let logits: Vec<f64> = (0..c).map(|_| r.random_range(-5.0..5.0)).collect();
        let s = r.random_range(-50.0..50.0);
        let shifted: Vec<f64> = logits.iter().map(|l| l + s).collect();
        for (a, b) in softmax(&logits).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() <= 1e-12, "shift {s}: {a} vs {b}");
        }
    }
}

#[test]
fn energy_moves_with_a_common_shift() {
    let mut r = rng(2);
    for _ in 0..500 {
        let c = r.random_range(1..8);
        let logits: Vec<f64> = (0..c).map(|_| r.random_range(-5.0..5.0)).collect();
        let s = r.random_range(-50.0..50.0);
        let shifted: Vec<f64> = logits.iter().map(|l| l + s).collect();
        let diff = energy_score(&shifted) - energy_score(&logits);
        assert!((diff - s).abs() <= 1e-12, "shift {s}: moved by {diff}");
    }
}

#[test]
fn wide_symmetric_logit_normal_is_uniform() {
    let p = sample_probabilities(&[0.0, 0.0], 50.0, 10_000, &mut rng(9));
    for v in &p {
        assert!((v - 0.5).abs() <= 0.02, "{p:?}");
    }
    let again = sample_probabilities(&[0.0, 0.0], 50.0, 10_000, &mut rng(9));
    assert_eq!(p, again);
}

#[test]
fn monte_carlo_estimate_converges() {
    let means = [1.0, -0.5, 0.2];
    let small = sample_probabilities(&means, 2.0, 10_000, &mut rng(3));
    let large = sample_probabilities(&means, 2.0, 40_000, &mut rng(4));
    // Softmax outputs lie in [0, 1], so each per-sample variance is at most 1/4.
    let se = 0.5 * (1.0 / 10_000.0 + 1.0 / 40_000.0f64).sqrt();
    for (a, b) in small.iter().zip(&large) {
        assert!((a - b).abs() < 3.0 * se, "{a} vs {b}");
    }
}

#[test]
fn temperature_does_not_change_the_predicted_class() {
    let mut model = Model::new(ModelConfig::new(HeadKind::ProtoMahalanobis { rank: 1 }), 8).unwrap();
    let task = sample_task(&TaskConfig::new(DatasetKind::Moons), &mut stream_rng(8, Stream::Evaluation, 0)).unwrap();
    let states = model.class_states(&task).unwrap();
    let feats = model.features(&task.query_inputs()).unwrap();
    let eps = model.config().epsilon;
    for z in feats.iter().take(100) {
        let mut classes = Vec::new();
        for t in [1, 3, 20, 500] {
            let p = predict(&states, z, t, 20_000, eps, &mut rng(5)).unwrap();
            classes.push(argmax(&p.probabilities));
            assert_eq!(argmax(&p.logit_means), classes[0]);
        }
        assert!(classes.iter().all(|&c| c == classes[0]), "{classes:?}");
    }
}

#[test]
fn entropy_rises_away_from_the_data() {
    let tasks = TaskConfig::new(DatasetKind::Moons);
    let mut model = Model::new(ModelConfig::new(HeadKind::ProtoMahalanobis { rank: 0 }), 21).unwrap();
    let cfg = TrainConfig { episodes: 600, seed: 21, ..TrainConfig::default() };
    fit(&mut model, &tasks, &cfg, |_| {}).unwrap();
    let mut r = rng(6);
    let mut means = vec![0.0; 3];
    for e in 0..10 {
        let task = sample_task(&tasks, &mut stream_rng(21, Stream::Evaluation, e)).unwrap();
        let states = model.class_states(&task).unwrap();
        let b = task.support_bounds();
        let center: Vec<f64> = b.lo.iter().zip(&b.hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let extent = b.lo.iter().zip(&b.hi).map(|(l, h)| h - l).fold(0.0, f64::max);
        for (k, scale) in [4.0, 8.0, 16.0].into_iter().enumerate() {
            let ring: Vec<Vec<f64>> = (0..32)
                .map(|i| {
                    let a = std::f64::consts::TAU * i as f64 / 32.0;
                    vec![center[0] + scale * extent * a.cos(), center[1] + scale * extent * a.sin()]
                })
                .collect();
            for z in model.features(&ring).unwrap() {
                means[k] += entropy(&model.predictive(&states, &z, 1000, &mut r).unwrap()) / 320.0;
            }
        }
    }
    assert!(means[0] <= means[1] + 1e-3 && means[1] <= means[2] + 1e-3, "{means:?}");
}
