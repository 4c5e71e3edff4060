use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::model::{ClassState, Model};
use crate::rng::{stream_rng, Stream};
use crate::tasks::Task;

use super::{ece, nll_and_accuracy};
use crate::model::argmax;

/// Descending precision eigenvalues of one class and their max/min ratio.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSpectrum {
    pub values: Vec<f64>,
    pub spread: f64,
}

pub fn eigen_spectrum_report(states: &[ClassState]) -> Result<Vec<ClassSpectrum>> {
    states
        .iter()
        .map(|s| {
            let values = symmetric_eigen(&s.precision)?.values;
            let max = values.first().copied().unwrap_or(1.0);
            let min = values.last().copied().unwrap_or(1.0);
            if !(min > 0.0) {
                return Err(Error::Invariant(format!("precision eigenvalue {min} is not positive")));
            }
            Ok(ClassSpectrum { values, spread: max / min })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VariantMetrics {
    pub accuracy: f64,
    pub nll: f64,
    pub ece: f64,
}

/// Predicted vs one eigenvalue of one class reset to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationRow {
    pub episode: usize,
    pub class: usize,
    pub eigen_index: usize,
    pub eigenvalue: f64,
    pub predicted: VariantMetrics,
    pub modified: VariantMetrics,
    /// 1 when the predicted matrix has the lower NLL, 0 when higher, ½ on ties.
    pub nll_score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationTable {
    pub rows: Vec<PerturbationRow>,
}

impl PerturbationTable {
    /// Fraction of variants the predicted precision beats on NLL.
    pub fn better_fraction(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.5;
        }
        self.rows.iter().map(|r| r.nll_score).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_predicted(&self) -> VariantMetrics {
        mean_metrics(self.rows.iter().map(|r| r.predicted))
    }

    pub fn mean_modified(&self) -> VariantMetrics {
        mean_metrics(self.rows.iter().map(|r| r.modified))
    }
}

fn mean_metrics(it: impl Iterator<Item = VariantMetrics>) -> VariantMetrics {
    let (mut n, mut acc) = (0.0, VariantMetrics { accuracy: 0.0, nll: 0.0, ece: 0.0 });
    for m in it {
        n += 1.0;
        acc.accuracy += m.accuracy;
        acc.nll += m.nll;
        acc.ece += m.ece;
    }
    let n = f64::max(n, 1.0);
    VariantMetrics { accuracy: acc.accuracy / n, nll: acc.nll / n, ece: acc.ece / n }
}

const TIE: f64 = 1e-12;

fn evaluate(
    model: &Model,
    states: &[ClassState],
    features: &[Vec<f64>],
    labels: &[usize],
    samples: usize,
    seed: u64,
) -> Result<VariantMetrics> {
    // Same seed for every variant of an episode: differences come from the
    // precision matrices, not from sampling noise.
    let mut rng = stream_rng(seed, Stream::Sampling, 0);
    let probs = features
        .iter()
        .map(|z| model.predictive(states, z, samples, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let fit = nll_and_accuracy(&probs, labels)?;
    let conf: Vec<f64> = probs.iter().map(|p| p.iter().copied().fold(0.0, f64::max).min(1.0)).collect();
    let correct: Vec<bool> = probs.iter().zip(labels).map(|(p, &y)| argmax(p) == y).collect();
    Ok(VariantMetrics { accuracy: fit.accuracy, nll: fit.nll, ece: ece(&conf, &correct)? })
}

/// For every episode, class and precision eigenvalue, resets that eigenvalue
/// to 1 (recomputing `log|Σ| = −Σ log λ`) and compares the episode's
/// query metrics against the unmodified model.
pub fn eigen_perturbation_experiment(
    model: &mut Model,
    tasks: &[Task],
    samples: usize,
    seed: u64,
) -> Result<PerturbationTable> {
    if !model.head().is_logit_normal() {
        return Err(Error::invalid("eigen_perturbation_experiment", "needs a ProtoMahalanobis head"));
    }
    let mut rows = Vec::new();
    for (episode, task) in tasks.iter().enumerate() {
        let states = model.class_states(task)?;
        let features = model.features(&task.query_inputs())?;
        let labels = task.query_labels();
        let episode_seed = seed.wrapping_add(episode as u64);
        let predicted = evaluate(model, &states, &features, &labels, samples, episode_seed)?;
        for (class, state) in states.iter().enumerate() {
            let eig = symmetric_eigen(&state.precision)?;
            for (i, &value) in eig.values.iter().enumerate() {
                let mut values = eig.values.clone();
                values[i] = 1.0;
                let logdet = -values.iter().map(|v| v.ln()).sum::<f64>();
                let mut variant = states.clone();
                variant[class] = ClassState::from_precision(state.prototype.clone(), eig.recompose(&values), logdet);
                let modified = evaluate(model, &variant, &features, &labels, samples, episode_seed)?;
                let diff = modified.nll - predicted.nll;
                let nll_score = if diff.abs() <= TIE {
                    0.5
                } else if diff > 0.0 {
                    1.0
                } else {
                    0.0
                };
                rows.push(PerturbationRow {
                    episode,
                    class,
                    eigen_index: i,
                    eigenvalue: value,
                    predicted,
                    modified,
                    nll_score,
                });
            }
        }
    }
    Ok(PerturbationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::LowRankCovariance;
    use crate::model::{HeadKind, ModelConfig};
    use crate::tasks::{sample_task, DatasetKind, TaskConfig};

    #[test]
    fn spectra_of_simple_covariances() {
        let id = ClassState::from_covariance(vec![0.0; 3], LowRankCovariance::identity(3));
        let d = ClassState::from_covariance(vec![0.0; 2], LowRankCovariance::diagonal(vec![0.1, 1.0]).unwrap());
        let r = eigen_spectrum_report(&[id, d]).unwrap();
        assert!(r[0].values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!((r[0].spread - 1.0).abs() < 1e-12);
        assert!((r[1].values[0] - 10.0).abs() < 1e-10 && (r[1].values[1] - 1.0).abs() < 1e-12);
        assert!((r[1].spread - 10.0).abs() < 1e-10);
    }

    #[test]
    fn identity_precision_variants_are_ties() {
        let model = Model::new(ModelConfig::new(HeadKind::ProtoMahalanobis { rank: 0 }), 0).unwrap();
        let states: Vec<ClassState> = (0..2)
            .map(|c| ClassState::from_covariance(vec![c as f64; 16], LowRankCovariance::identity(16)))
            .collect();
        let feats = vec![vec![0.3; 16], vec![0.8; 16]];
        let base = evaluate(&model, &states, &feats, &[0, 1], 20, 1).unwrap();
        let eig = symmetric_eigen(&states[0].precision).unwrap();
        let mut v = eig.values.clone();
        v[3] = 1.0;
        let mut variant = states.clone();
        variant[0] = ClassState::from_precision(states[0].prototype.clone(), eig.recompose(&v), 0.0);
        let other = evaluate(&model, &variant, &feats, &[0, 1], 20, 1).unwrap();
        assert!((base.nll - other.nll).abs() <= TIE);
    }

    #[test]
    fn unmodified_round_trip_keeps_metrics() {
        let mut model = Model::new(ModelConfig::new(HeadKind::ProtoMahalanobis { rank: 1 }), 2).unwrap();
        let task = sample_task(&TaskConfig::new(DatasetKind::Moons), &mut stream_rng(2, Stream::Evaluation, 0)).unwrap();
        let states = model.class_states(&task).unwrap();
        let feats = model.features(&task.query_inputs()).unwrap();
        let labels = task.query_labels();
        let base = evaluate(&model, &states, &feats, &labels, 10, 3).unwrap();
        let rebuilt: Vec<ClassState> = states
            .iter()
            .map(|s| {
                let eig = symmetric_eigen(&s.precision).unwrap();
                let logdet = -eig.values.iter().map(|v| v.ln()).sum::<f64>();
                ClassState::from_precision(s.prototype.clone(), eig.recompose(&eig.values), logdet)
            })
            .collect();
        let again = evaluate(&model, &rebuilt, &feats, &labels, 10, 3).unwrap();
        assert!((base.nll - again.nll).abs() < 1e-9);
        assert!((base.accuracy - again.accuracy).abs() < 1e-9);
        assert!((base.ece - again.ece).abs() < 1e-9);
    }

    #[test]
    fn experiment_emits_one_row_per_eigenvalue() {
        let mut cfg = ModelConfig::new(HeadKind::ProtoMahalanobis { rank: 1 });
        cfg.feature_dim = 4;
        let mut model = Model::new(cfg, 1).unwrap();
        let task = sample_task(&TaskConfig::new(DatasetKind::Moons), &mut stream_rng(1, Stream::Evaluation, 0)).unwrap();
        let table = eigen_perturbation_experiment(&mut model, &[task], 5, 0).unwrap();
        assert_eq!(table.rows.len(), 2 * 4);
        let f = table.better_fraction();
        assert!((0.0..=1.0).contains(&f));
    }
}
