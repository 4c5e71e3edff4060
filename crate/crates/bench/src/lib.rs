//! Fixtures shared by the benchmarks.

use mmc_core::rng::{stream_rng, Stream};
use mmc_core::tasks::{sample_task, DatasetKind, Task, TaskConfig};
use mmc_core::Tensor;
use rand::Rng;

pub fn moons_task(seed: u64) -> Task {
    sample_task(&TaskConfig::new(DatasetKind::Moons), &mut stream_rng(seed, Stream::Evaluation, 0))
        .expect("default moons config is valid")
}

/// Diagonal in `[0.1, 1]` and a `d × r` factor with entries in `[-1, 1]`.
pub fn low_rank_inputs(d: usize, r: usize, seed: u64) -> (Vec<f64>, Tensor) {
    let mut rng = stream_rng(seed, Stream::Init, 0);
    let diag = (0..d).map(|_| rng.random_range(0.1..1.0)).collect();
    let factors = Tensor::matrix(d, r, (0..d * r).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("length matches shape");
    (diag, factors)
}

pub fn random_set(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, Stream::Plot, 0);
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
}
