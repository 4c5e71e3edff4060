//! Held-out evaluation: in-distribution queries plus uniform noise inputs.

use crate::error::{Error, Result};
use crate::metrics::{eigen_spectrum_report, energy_score, CalibrationReport, PredictionLog};
use crate::model::{entropy, HeadKind, Model};
use crate::rng::{stream_rng, Stream};
use crate::tasks::{sample_task, TaskConfig};

/// Offset separating noise-input draws from query sampling streams.
const NOISE_STREAM: u64 = 1 << 40;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub episodes: usize,
    pub mc_samples: usize,
    pub seed: u64,
    /// Noise inputs per episode; `None` matches the query count.
    pub noise_per_episode: Option<usize>,
    /// Side-length factor applied to the support bounding box.
    pub box_expansion: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 200,
            mc_samples: 100,
            seed: 0,
            noise_per_episode: None,
            box_expansion: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub head: HeadKind,
    pub report: CalibrationReport,
    /// Mean per-class precision eigenvalue spread (max/min).
    pub mean_spread: f64,
    pub mc_samples: usize,
}

pub fn evaluate(model: &mut Model, tasks: &TaskConfig, config: &EvalConfig) -> Result<Evaluation> {
    if config.episodes == 0 {
        return Err(Error::Empty("evaluation episodes"));
    }
    if config.mc_samples == 0 {
        return Err(Error::invalid("evaluate", "need at least one MC sample"));
    }
    let mut log = PredictionLog::default();
    let mut spread_sum = 0.0;
    let mut spread_count = 0usize;
    for e in 0..config.episodes as u64 {
        let task = sample_task(tasks, &mut stream_rng(config.seed, Stream::Evaluation, e))?;
        let states = model.class_states(&task)?;
        for s in eigen_spectrum_report(&states)? {
            spread_sum += s.spread;
            spread_count += 1;
        }
        let mut rng = stream_rng(config.seed, Stream::Sampling, e);
        let features = model.features(&task.query_inputs())?;
        for (z, sample) in features.iter().zip(&task.query) {
            log.id_probabilities.push(model.predictive(&states, z, config.mc_samples, &mut rng)?);
            log.id_labels.push(sample.label);
            log.id_scores.push(energy_score(&model.logits(&states, z)?));
        }
        let n_noise = config.noise_per_episode.unwrap_or(task.query.len());
        let bounds = task.support_bounds().expanded(config.box_expansion);
        let noise = bounds.uniform_samples(n_noise, &mut stream_rng(config.seed, Stream::Evaluation, e | NOISE_STREAM));
        for z in model.features(&noise)? {
            log.ood_probabilities.push(model.predictive(&states, &z, config.mc_samples, &mut rng)?);
            log.ood_scores.push(energy_score(&model.logits(&states, &z)?));
        }
    }
    Ok(Evaluation {
        head: model.head(),
        report: CalibrationReport::from_log(&log, config.episodes)?,
        mean_spread: spread_sum / spread_count.max(1) as f64,
        mc_samples: config.mc_samples,
    })
}

/// Mean predictive entropy at the expanded-box corners and at the class
/// prototypes, over `config.episodes` evaluation episodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyContrast {
    pub corners: f64,
    pub prototypes: f64,
}

impl EntropyContrast {
    pub fn gap(&self) -> f64 {
        self.corners - self.prototypes
    }
}

pub fn entropy_contrast(model: &mut Model, tasks: &TaskConfig, config: &EvalConfig) -> Result<EntropyContrast> {
    if config.episodes == 0 {
        return Err(Error::Empty("evaluation episodes"));
    }
    let (mut corners, mut prototypes) = (0.0, 0.0);
    for e in 0..config.episodes as u64 {
        let task = sample_task(tasks, &mut stream_rng(config.seed, Stream::Evaluation, e))?;
        let states = model.class_states(&task)?;
        let mut rng = stream_rng(config.seed, Stream::Plot, e);
        let box_corners = task.support_bounds().expanded(config.box_expansion).corners();
        let features = model.features(&box_corners)?;
        for z in &features {
            corners += entropy(&model.predictive(&states, z, config.mc_samples, &mut rng)?) / features.len() as f64;
        }
        for s in &states {
            prototypes += entropy(&model.predictive(&states, &s.prototype, config.mc_samples, &mut rng)?) / states.len() as f64;
        }
    }
    let n = config.episodes as f64;
    Ok(EntropyContrast { corners: corners / n, prototypes: prototypes / n })
}
