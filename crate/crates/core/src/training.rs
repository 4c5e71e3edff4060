//! Episodic meta-training and post-hoc temperature calibration.

use crate::error::{Error, Result};
use crate::model::{baseline_temperature_scale, tune_temperature, Model, TemperatureSearch};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::tasks::{sample_task, Task, TaskConfig};
use crate::tensor::{Adam, AdamConfig, StepOutcome};

/// Consecutive non-finite episodes tolerated before training aborts.
pub const MAX_NON_FINITE: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub episodes: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub validation_episodes: usize,
    pub mc_samples: usize,
    pub t_max: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 2000,
            adam: AdamConfig::default(),
            seed: 0,
            validation_episodes: 20,
            mc_samples: 100,
            t_max: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub loss: f64,
    pub accuracy: f64,
    /// The parameter update was skipped (non-finite loss or gradient).
    pub skipped: bool,
}

/// Result of the post-training calibration step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Calibration {
    /// Energy temperature `T` of the logit-normal head.
    Energy(TemperatureSearch),
    /// Softmax temperature `τ` of a baseline head.
    Logit(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub log: Vec<EpisodeLog>,
    pub calibration: Option<Calibration>,
}

fn is_numeric(e: &Error) -> bool {
    matches!(e, Error::NonFinite(_) | Error::Invariant(_))
}

/// Episode-by-episode meta-training state: the optimizer and the
/// non-finite streak counter.
#[derive(Clone, Debug)]
pub struct Trainer {
    adam: Adam,
    bad_streak: usize,
    episode: usize,
}

impl Trainer {
    pub fn new(model: &Model, config: &TrainConfig) -> Result<Self> {
        Ok(Trainer {
            adam: Adam::new(config.adam, model.params().values())?,
            bad_streak: 0,
            episode: 0,
        })
    }

    /// Episodes taken so far.
    pub fn episodes(&self) -> usize {
        self.episode
    }

    /// One Adam step on the query NLL of `task`. Numeric failures skip the
    /// update; the third consecutive skip is an error.
    pub fn step(&mut self, model: &mut Model, task: &Task) -> Result<EpisodeLog> {
        let episode = self.episode;
        self.episode += 1;
        let entry = match model.train_step(task) {
            Ok(step) => {
                let outcome = self.adam.step(model.params_mut().values_mut(), &step.gradients)?;
                EpisodeLog {
                    episode,
                    loss: step.loss,
                    accuracy: step.accuracy,
                    skipped: outcome == StepOutcome::SkippedNonFinite,
                }
            }
            Err(e) if is_numeric(&e) => {
                log::warn!("episode {episode}: {e}");
                EpisodeLog {
                    episode,
                    loss: f64::NAN,
                    accuracy: f64::NAN,
                    skipped: true,
                }
            }
            Err(e) => return Err(e),
        };
        self.bad_streak = if entry.skipped { self.bad_streak + 1 } else { 0 };
        if self.bad_streak >= MAX_NON_FINITE {
            return Err(Error::NonFinite(format!(
                "{MAX_NON_FINITE} consecutive non-finite episodes ending at episode {episode}"
            )));
        }
        Ok(entry)
    }
}

/// The training task for `episode` under `seed`.
pub fn training_task(tasks: &TaskConfig, seed: u64, episode: usize) -> Result<Task> {
    sample_task(tasks, &mut stream_rng(seed, Stream::Train, episode as u64))
}

/// Meta-trains `model` for `config.episodes` episodes: sample a task, build
/// prototypes and covariances, take one Adam step on the query NLL.
/// `observer` sees every completed episode.
pub fn train(
    model: &mut Model,
    tasks: &TaskConfig,
    config: &TrainConfig,
    mut observer: impl FnMut(&EpisodeLog),
) -> Result<Vec<EpisodeLog>> {
    let mut trainer = Trainer::new(model, config)?;
    let mut log = Vec::with_capacity(config.episodes);
    for episode in 0..config.episodes {
        let task = training_task(tasks, config.seed, episode)?;
        let entry = trainer.step(model, &task)?;
        observer(&entry);
        log.push(entry);
    }
    Ok(log)
}

/// Tunes `T` (logit-normal head) or `τ` (baselines) on fresh validation
/// episodes and stores it in the model.
pub fn calibrate(model: &mut Model, tasks: &TaskConfig, config: &TrainConfig) -> Result<Calibration> {
    if config.validation_episodes == 0 {
        return Err(Error::Empty("validation episodes"));
    }
    let mut records = Vec::new();
    let mut logits = Vec::new();
    let mut labels = Vec::new();
    for e in 0..config.validation_episodes {
        let task = sample_task(tasks, &mut stream_rng(config.seed, Stream::Validation, e as u64))?;
        let states = model.class_states(&task)?;
        let features = model.features(&task.query_inputs())?;
        for (z, sample) in features.iter().zip(&task.query) {
            if model.head().is_logit_normal() {
                records.push(model.query_record(&states, z, sample.label)?);
            } else {
                logits.push(model.logits(&states, z)?);
                labels.push(sample.label);
            }
        }
    }
    let calibration = if model.head().is_logit_normal() {
        let seed = derive_seed(config.seed, Stream::Validation, u64::MAX);
        let search = tune_temperature(&records, model.config().epsilon, config.mc_samples, config.t_max, seed)?;
        model.energy_temperature = search.temperature;
        Calibration::Energy(search)
    } else {
        let tau = baseline_temperature_scale(&logits, &labels)?;
        model.logit_temperature = tau;
        Calibration::Logit(tau)
    };
    Ok(calibration)
}

/// [`train`] followed by [`calibrate`] (skipped for zero episodes, which
/// leaves `T = 1`).
pub fn fit(
    model: &mut Model,
    tasks: &TaskConfig,
    config: &TrainConfig,
    observer: impl FnMut(&EpisodeLog),
) -> Result<TrainOutcome> {
    let log = train(model, tasks, config, observer)?;
    let calibration = if config.episodes > 0 {
        Some(calibrate(model, tasks, config)?)
    } else {
        None
    };
    Ok(TrainOutcome { log, calibration })
}
