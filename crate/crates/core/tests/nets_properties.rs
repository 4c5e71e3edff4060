mod common;

use common::rng;
use mmc_core::model::{HeadKind, Model, ModelConfig};
use mmc_core::nets::{spectral_norm, EncoderConfig, SetEncoder};
use mmc_core::rng::{stream_rng, Stream};
use mmc_core::tasks::{sample_task, DatasetKind, TaskConfig};
use mmc_core::tensor::ParamStore;
use mmc_core::training::{training_task, TrainConfig, Trainer};
use mmc_core::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

fn encode(store: &ParamStore, enc: &mut SetEncoder, rows: &[Vec<f64>]) -> Vec<f64> {
    let tape = Tape::new();
    let params = store.bind(&tape, false);
    let out = enc.encode(&params, tape.constant(Tensor::from_rows(rows).unwrap())).unwrap();
    let mut v = out.diag_logits.value().data().to_vec();
    v.extend_from_slice(out.factors.value().data());
    v
}

#[test]
fn set_encoder_is_permutation_invariant() {
    let mut r = rng(31);
    let mut store = ParamStore::new();
    let mut enc = SetEncoder::new(&mut store, "encoder", EncoderConfig::for_features(16, 4), &mut stream_rng(3, Stream::Init, 0));
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = r.random_range(1..=12);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..16).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut r);
        let a = encode(&store, &mut enc, &rows);
        let b = encode(&store, &mut enc, &shuffled);
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
    }
    assert!(worst <= 1e-10, "max deviation {worst:e}");
}

#[test]
fn spectral_bound_holds_through_training() {
    let mut model = Model::new(ModelConfig::new(HeadKind::ProtoMahalanobis { rank: 1 }), 12).unwrap();
    let tasks = TaskConfig::new(DatasetKind::Moons);
    let cfg = TrainConfig { episodes: 500, seed: 12, ..TrainConfig::default() };
    let mut trainer = Trainer::new(&model, &cfg).unwrap();
    let c = model.config().spectral_bound;
    let mut worst: f64 = 0.0;
    for e in 0..cfg.episodes {
        trainer.step(&mut model, &training_task(&tasks, cfg.seed, e).unwrap()).unwrap();
        for layer in model.extractor().layers() {
            worst = worst.max(spectral_norm(&layer.effective_weight(model.params())));
        }
    }
    assert!(worst <= c + 1e-2, "largest effective norm {worst}");
}

#[test]
fn extractor_is_empirically_bi_lipschitz() {
    let mut model = Model::new(ModelConfig::new(HeadKind::ProtonetEuclideanSN), 2).unwrap();
    let upper = model.extractor().lipschitz_upper_bound(model.params());
    let task = sample_task(&TaskConfig::new(DatasetKind::Moons), &mut stream_rng(2, Stream::Evaluation, 0)).unwrap();
    let inputs = task.query_inputs();
    let feats = model.features(&inputs).unwrap();
    let mut r = rng(4);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for _ in 0..1000 {
        let (i, j) = (r.random_range(0..inputs.len()), r.random_range(0..inputs.len()));
        let dx = dist(&inputs[i], &inputs[j]);
        if dx == 0.0 {
            continue;
        }
        let ratio = dist(&feats[i], &feats[j]) / dx;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    assert!(lo > 0.0, "collapsed pair, ratio {lo}");
    assert!(hi <= upper * (1.0 + 1e-9), "ratio {hi} above bound {upper}");
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
