//! Episodic toy task distributions.
//!
//! Every task is built the same way: draw a pool of 2-D points per class,
//! shuffle class order, bias each class's support set onto one half of its
//! pool, then normalize support and query with the support mean and variance.

mod bias;
mod generators;
mod grid;

pub use bias::{bias_support, BiasedClass};
pub use generators::{class_pools, random_class_covariance, ClassCovariance, TaskInfo};
pub use grid::Bounds;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Moons,
    Circles,
    Gaussians,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 3] = [DatasetKind::Moons, DatasetKind::Circles, DatasetKind::Gaussians];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Moons => "moons",
            DatasetKind::Circles => "circles",
            DatasetKind::Gaussians => "gaussians",
        }
    }

    /// `(ways, shots)` used for this dataset.
    pub fn default_episode(self) -> (usize, usize) {
        match self {
            DatasetKind::Moons | DatasetKind::Circles => (2, 5),
            DatasetKind::Gaussians => (10, 10),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid("dataset", format!("unknown dataset {s:?} (expected moons, circles or gaussians)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskConfig {
    pub kind: DatasetKind,
    pub ways: usize,
    pub shots: usize,
    pub pool_per_class: usize,
    pub max_query_per_class: usize,
    /// Noise standard deviation is drawn from `(0, noise_max]`.
    pub noise_max: f64,
    /// Inner/outer circle ratio is drawn from `(0, circle_scale_max]`.
    pub circle_scale_max: f64,
    pub fixed_circle_scale: Option<f64>,
    /// Gaussian class means are drawn from `U(-r, r)²`.
    pub mean_range: f64,
    pub min_mean_separation: f64,
    /// Forces `D = I` for Gaussian class covariances.
    pub unit_gaussian_covariance: bool,
    /// Standardize inputs with the support statistics; `false` keeps raw coordinates.
    pub normalize: bool,
}

impl TaskConfig {
    pub fn new(kind: DatasetKind) -> Self {
        let (ways, shots) = kind.default_episode();
        TaskConfig {
            kind,
            ways,
            shots,
            pool_per_class: 200,
            max_query_per_class: 100,
            noise_max: 0.25,
            circle_scale_max: 0.8,
            fixed_circle_scale: None,
            mean_range: 3.0,
            min_mean_separation: 1.0,
            unit_gaussian_covariance: false,
            normalize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.kind, DatasetKind::Moons | DatasetKind::Circles) && self.ways != 2 {
            return Err(Error::invalid("task config", format!("{} tasks are 2-way, got {}", self.kind, self.ways)));
        }
        if self.ways == 0 || self.shots == 0 {
            return Err(Error::invalid("task config", "ways and shots must be positive"));
        }
        if self.pool_per_class < 2 * self.shots {
            return Err(Error::invalid(
                "task config",
                format!("pool of {} per class cannot host a biased {}-shot support", self.pool_per_class, self.shots),
            ));
        }
        if !(self.noise_max >= 0.0 && self.noise_max <= 0.25) {
            return Err(Error::invalid("task config", format!("noise_max {} outside [0, 0.25]", self.noise_max)));
        }
        if !(self.circle_scale_max > 0.0 && self.circle_scale_max <= 0.8) {
            return Err(Error::invalid(
                "task config",
                format!("circle_scale_max {} outside (0, 0.8]", self.circle_scale_max),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub label: usize,
}

/// Per-dimension support statistics used to normalize a task.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Normalization {
    pub fn of(points: &[Vec<f64>]) -> Self {
        let dim = points.first().map_or(0, Vec::len);
        let n = points.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n).collect();
        let var = (0..dim)
            .map(|j| points.iter().map(|p| (p[j] - mean[j]).powi(2)).sum::<f64>() / n)
            .map(|v| if v > 0.0 { v } else { 1.0 })
            .collect();
        Normalization { mean, var }
    }

    pub fn identity(dim: usize) -> Self {
        Normalization { mean: vec![0.0; dim], var: vec![1.0; dim] }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(v, (m, s2))| (v - m) / s2.sqrt())
            .collect()
    }
}

/// One episode: a class-major support set and a query set, both normalized
/// with the support statistics.
#[derive(Clone, Debug)]
pub struct Task {
    pub ways: usize,
    pub shots: usize,
    pub support: Vec<Sample>,
    pub query: Vec<Sample>,
    pub normalization: Normalization,
    pub info: TaskInfo,
}

impl Task {
    pub fn input_dim(&self) -> usize {
        self.support.first().map_or(0, |s| s.x.len())
    }

    pub fn support_inputs(&self) -> Vec<Vec<f64>> {
        self.support.iter().map(|s| s.x.clone()).collect()
    }

    pub fn query_inputs(&self) -> Vec<Vec<f64>> {
        self.query.iter().map(|s| s.x.clone()).collect()
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.query.iter().map(|s| s.label).collect()
    }

    pub fn support_labels(&self) -> Vec<usize> {
        self.support.iter().map(|s| s.label).collect()
    }

    /// Bounding box of the (normalized) support inputs.
    pub fn support_bounds(&self) -> Bounds {
        Bounds::of_points(&self.support_inputs())
    }
}

pub fn sample_task(config: &TaskConfig, rng: &mut impl Rng) -> Result<Task> {
    config.validate()?;
    let (pools, info) = class_pools(config, rng)?;
    let classes = bias_support(&pools, config.shots, config.max_query_per_class, rng)?;
    let raw_support: Vec<Vec<f64>> = classes.iter().flat_map(|c| c.support.iter().cloned()).collect();
    let normalization = if config.normalize {
        Normalization::of(&raw_support)
    } else {
        Normalization::identity(raw_support.first().map_or(0, Vec::len))
    };
    let mut support = Vec::with_capacity(raw_support.len());
    let mut query = Vec::new();
    for (label, class) in classes.iter().enumerate() {
        support.extend(class.support.iter().map(|x| Sample {
            x: normalization.apply(x),
            label,
        }));
        query.extend(class.query.iter().map(|x| Sample {
            x: normalization.apply(x),
            label,
        }));
    }
    Ok(Task {
        ways: config.ways,
        shots: config.shots,
        support,
        query,
        normalization,
        info,
    })
}

pub fn sample_moons(config: &TaskConfig, rng: &mut impl Rng) -> Result<Task> {
    debug_assert_eq!(config.kind, DatasetKind::Moons);
    sample_task(config, rng)
}

pub fn sample_circles(config: &TaskConfig, rng: &mut impl Rng) -> Result<Task> {
    debug_assert_eq!(config.kind, DatasetKind::Circles);
    sample_task(config, rng)
}

pub fn sample_gaussians(config: &TaskConfig, rng: &mut impl Rng) -> Result<Task> {
    debug_assert_eq!(config.kind, DatasetKind::Gaussians);
    sample_task(config, rng)
}
