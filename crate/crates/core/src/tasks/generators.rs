use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{DatasetKind, TaskConfig};
use crate::error::Result;
use crate::tensor::Tensor;

/// Per-task randomized parameters, kept for audits and tests.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskInfo {
    pub noise_std: f64,
    pub circle_scale: Option<f64>,
    /// `class_order[new_label] = generator class`.
    pub class_order: Vec<usize>,
}

impl TaskInfo {
    pub fn inverted(&self) -> bool {
        self.class_order.iter().enumerate().any(|(i, &c)| i != c)
    }
}

/// Uniform draw from the half-open interval `(0, hi]`.
fn uniform_open_closed(rng: &mut impl Rng, hi: f64) -> f64 {
    hi * (1.0 - rng.random::<f64>())
}

fn gaussian(rng: &mut impl Rng, std: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    std * z
}

fn moons(config: &TaskConfig, noise: f64, rng: &mut impl Rng) -> Vec<Vec<Vec<f64>>> {
    let n = config.pool_per_class;
    let mut outer = Vec::with_capacity(n);
    let mut inner = Vec::with_capacity(n);
    for _ in 0..n {
        let t = rng.random_range(0.0..=PI);
        outer.push(vec![t.cos() + gaussian(rng, noise), t.sin() + gaussian(rng, noise)]);
    }
    for _ in 0..n {
        let t = rng.random_range(0.0..=PI);
        inner.push(vec![1.0 - t.cos() + gaussian(rng, noise), 0.5 - t.sin() + gaussian(rng, noise)]);
    }
    vec![outer, inner]
}

fn circles(config: &TaskConfig, noise: f64, scale: f64, rng: &mut impl Rng) -> Vec<Vec<Vec<f64>>> {
    let n = config.pool_per_class;
    let mut ring = |radius: f64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let t = rng.random_range(0.0..2.0 * PI);
                vec![radius * t.cos() + gaussian(rng, noise), radius * t.sin() + gaussian(rng, noise)]
            })
            .collect()
    };
    let outer = ring(1.0);
    let inner = ring(scale);
    vec![outer, inner]
}

/// A Gaussian class covariance `Q diag(D) Qᵀ`.
#[derive(Clone, Debug)]
pub struct ClassCovariance {
    pub q: Tensor,
    pub d: Vec<f64>,
    pub covariance: Tensor,
}

/// Thin QR of a 2×2 matrix by Gram-Schmidt; `None` when rank-deficient.
fn orthonormal_factor(m: &[f64; 4]) -> Option<Tensor> {
    let (a1, a2) = ([m[0], m[2]], [m[1], m[3]]);
    let n1 = (a1[0] * a1[0] + a1[1] * a1[1]).sqrt();
    if n1 < 1e-12 {
        return None;
    }
    let q1 = [a1[0] / n1, a1[1] / n1];
    let proj = q1[0] * a2[0] + q1[1] * a2[1];
    let r2 = [a2[0] - proj * q1[0], a2[1] - proj * q1[1]];
    let n2 = (r2[0] * r2[0] + r2[1] * r2[1]).sqrt();
    if n2 < 1e-12 {
        return None;
    }
    let q2 = [r2[0] / n2, r2[1] / n2];
    Some(Tensor::matrix(2, 2, vec![q1[0], q2[0], q1[1], q2[1]]).expect("2x2"))
}

/// Random 2-D covariance: `M ~ U(-1, 1)^{2×2}`, `Q` from the QR of `M`,
/// `D ~ U(0, 1]` (or `D = I` when `unit`). Rank-deficient draws are resampled.
pub fn random_class_covariance(rng: &mut impl Rng, unit: bool) -> ClassCovariance {
    let q = loop {
        let m: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if let Some(q) = orthonormal_factor(&m) {
            break q;
        }
    };
    let d: Vec<f64> = if unit {
        vec![1.0, 1.0]
    } else {
        (0..2).map(|_| uniform_open_closed(rng, 1.0)).collect()
    };
    let qd = q.matmul(&Tensor::diag(&d)).expect("2x2");
    let covariance = qd.matmul(&q.transpose().expect("2x2")).expect("2x2");
    ClassCovariance { q, d, covariance }
}

fn gaussians(config: &TaskConfig, rng: &mut impl Rng) -> Vec<Vec<Vec<f64>>> {
    let r = config.mean_range;
    let mut means: Vec<[f64; 2]> = Vec::with_capacity(config.ways);
    while means.len() < config.ways {
        let candidate = [rng.random_range(-r..r), rng.random_range(-r..r)];
        let separated = means.iter().all(|m| {
            let dx = m[0] - candidate[0];
            let dy = m[1] - candidate[1];
            (dx * dx + dy * dy).sqrt() >= config.min_mean_separation
        });
        if separated {
            means.push(candidate);
        }
    }
    means
        .iter()
        .map(|mean| {
            let cov = random_class_covariance(rng, config.unit_gaussian_covariance);
            let sd: Vec<f64> = cov.d.iter().map(|v| v.sqrt()).collect();
            (0..config.pool_per_class)
                .map(|_| {
                    let e0: f64 = rng.sample::<f64, _>(StandardNormal) * sd[0];
                    let e1: f64 = rng.sample::<f64, _>(StandardNormal) * sd[1];
                    vec![
                        mean[0] + cov.q.at(0, 0) * e0 + cov.q.at(0, 1) * e1,
                        mean[1] + cov.q.at(1, 0) * e0 + cov.q.at(1, 1) * e1,
                    ]
                })
                .collect()
        })
        .collect()
}

/// Raw (unnormalized) per-class point pools in shuffled class order.
pub fn class_pools(config: &TaskConfig, rng: &mut impl Rng) -> Result<(Vec<Vec<Vec<f64>>>, TaskInfo)> {
    let noise = if config.kind == DatasetKind::Gaussians || config.noise_max == 0.0 {
        0.0
    } else {
        uniform_open_closed(rng, config.noise_max)
    };
    let mut circle_scale = None;
    let pools = match config.kind {
        DatasetKind::Moons => moons(config, noise, rng),
        DatasetKind::Circles => {
            let scale = config
                .fixed_circle_scale
                .unwrap_or_else(|| uniform_open_closed(rng, config.circle_scale_max));
            circle_scale = Some(scale);
            circles(config, noise, scale, rng)
        }
        DatasetKind::Gaussians => gaussians(config, rng),
    };
    let mut order: Vec<usize> = (0..pools.len()).collect();
    order.shuffle(rng);
    let mut slots: Vec<Option<Vec<Vec<f64>>>> = pools.into_iter().map(Some).collect();
    let shuffled = order.iter().map(|&c| slots[c].take().expect("permutation")).collect();
    Ok((
        shuffled,
        TaskInfo {
            noise_std: noise,
            circle_scale,
            class_order: order,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::symmetric_eigen;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn noiseless_moons_lie_on_unit_arcs() {
        let mut cfg = TaskConfig::new(DatasetKind::Moons);
        cfg.noise_max = 0.0;
        let mut rng = stream_rng(0, Stream::Train, 0);
        let (pools, info) = class_pools(&cfg, &mut rng).unwrap();
        assert_eq!(info.noise_std, 0.0);
        let (outer, inner) = if info.inverted() { (&pools[1], &pools[0]) } else { (&pools[0], &pools[1]) };
        for p in outer {
            assert!((p[0] * p[0] + p[1] * p[1] - 1.0).abs() < 1e-12);
            assert!(p[1] >= -1e-12);
        }
        for p in inner {
            assert!(((p[0] - 1.0).powi(2) + (p[1] - 0.5).powi(2) - 1.0).abs() < 1e-12);
            assert!(p[1] <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn moons_class_inversion_frequency() {
        let cfg = TaskConfig::new(DatasetKind::Moons);
        let inverted = (0..1000)
            .filter(|&i| {
                let mut rng = stream_rng(77, Stream::Train, i);
                class_pools(&cfg, &mut rng).unwrap().1.inverted()
            })
            .count();
        let rate = inverted as f64 / 1000.0;
        assert!((rate - 0.5).abs() <= 0.05, "inversion rate {rate}");
    }

    #[test]
    fn circle_radius_ratio_matches_scale() {
        let mut cfg = TaskConfig::new(DatasetKind::Circles);
        cfg.noise_max = 0.0;
        cfg.fixed_circle_scale = Some(0.8);
        let mut rng = stream_rng(2, Stream::Train, 0);
        let (pools, info) = class_pools(&cfg, &mut rng).unwrap();
        let radius = |p: &Vec<f64>| (p[0] * p[0] + p[1] * p[1]).sqrt();
        let (outer, inner) = if info.inverted() { (&pools[1], &pools[0]) } else { (&pools[0], &pools[1]) };
        for (o, i) in outer.iter().zip(inner) {
            assert!((radius(i) / radius(o) - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn randomized_parameters_stay_in_half_open_ranges() {
        let cfg = TaskConfig::new(DatasetKind::Circles);
        let mut rng = stream_rng(4, Stream::Train, 0);
        for _ in 0..10_000 {
            let noise = uniform_open_closed(&mut rng, cfg.noise_max);
            let scale = uniform_open_closed(&mut rng, cfg.circle_scale_max);
            assert!(noise > 0.0 && noise <= 0.25);
            assert!(scale > 0.0 && scale <= 0.8);
        }
        let mut small = cfg.clone();
        small.pool_per_class = 10;
        for i in 0..200 {
            let (_, info) = class_pools(&small, &mut stream_rng(4, Stream::Train, i)).unwrap();
            assert!(info.noise_std > 0.0 && info.noise_std <= 0.25);
            let s = info.circle_scale.unwrap();
            assert!(s > 0.0 && s <= 0.8);
        }
    }

    #[test]
    fn gaussian_covariances_have_the_drawn_spectrum() {
        let mut rng = stream_rng(8, Stream::Train, 0);
        for _ in 0..100 {
            let c = random_class_covariance(&mut rng, false);
            let qtq = c.q.transpose().unwrap().matmul(&c.q).unwrap();
            assert!(qtq.max_abs_diff(&Tensor::eye(2)) < 1e-12);
            assert!((c.covariance.at(0, 1) - c.covariance.at(1, 0)).abs() < 1e-15);
            let eig = symmetric_eigen(&c.covariance).unwrap();
            let mut d = c.d.clone();
            d.sort_by(|a, b| b.total_cmp(a));
            for (e, v) in eig.values.iter().zip(&d) {
                assert!((e - v).abs() < 1e-10);
            }
            assert!(c.d.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn unit_covariance_samples_are_isotropic() {
        let mut cfg = TaskConfig::new(DatasetKind::Gaussians);
        cfg.unit_gaussian_covariance = true;
        cfg.pool_per_class = 20_000;
        cfg.ways = 2;
        let (pools, _) = class_pools(&cfg, &mut stream_rng(6, Stream::Train, 0)).unwrap();
        let pts = &pools[0];
        let n = pts.len() as f64;
        let m: Vec<f64> = (0..2).map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / n).collect();
        let cov = |a: usize, b: usize| pts.iter().map(|p| (p[a] - m[a]) * (p[b] - m[b])).sum::<f64>() / n;
        assert!((cov(0, 0) - 1.0).abs() < 0.05);
        assert!((cov(1, 1) - 1.0).abs() < 0.05);
        assert!(cov(0, 1).abs() < 0.05);
    }

    #[test]
    fn gaussian_means_are_separated() {
        let cfg = TaskConfig::new(DatasetKind::Gaussians);
        let (pools, _) = class_pools(&cfg, &mut stream_rng(1, Stream::Train, 0)).unwrap();
        assert_eq!(pools.len(), 10);
        assert!(pools.iter().all(|p| p.len() == 200));
    }
}
