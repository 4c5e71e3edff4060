//! Calibration and out-of-distribution metrics.

mod eigen;

pub use eigen::{eigen_perturbation_experiment, eigen_spectrum_report, ClassSpectrum, PerturbationRow, PerturbationTable};

use crate::error::{Error, Result};
use crate::model::{argmax, logsumexp, PROB_FLOOR};

pub const ECE_BINS: usize = 15;

/// One equal-width confidence bin.
#[derive(Clone, Debug, PartialEq)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub mean_accuracy: f64,
}

fn bin_index(confidence: f64) -> usize {
    // Bins are (lo, hi], with 0 going to the first bin.
    let i = (confidence * ECE_BINS as f64).ceil() as usize;
    i.saturating_sub(1).min(ECE_BINS - 1)
}

/// Bins `confidences` and averages the per-prediction `accuracies` (0/1 for
/// ordinary predictions, fractional when the target is a distribution).
pub fn bin_table(confidences: &[f64], accuracies: &[f64]) -> Result<Vec<Bin>> {
    if confidences.is_empty() {
        return Err(Error::Empty("ece input"));
    }
    if confidences.len() != accuracies.len() {
        return Err(Error::shape("ece", &[confidences.len()], &[accuracies.len()]));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::invalid("ece", format!("confidence {c} outside [0, 1]")));
    }
    let mut sums = vec![(0usize, 0.0, 0.0); ECE_BINS];
    for (&c, &a) in confidences.iter().zip(accuracies) {
        let s = &mut sums[bin_index(c)];
        s.0 += 1;
        s.1 += c;
        s.2 += a;
    }
    Ok(sums
        .iter()
        .enumerate()
        .map(|(i, &(count, conf, acc))| {
            let n = count.max(1) as f64;
            Bin {
                lo: i as f64 / ECE_BINS as f64,
                hi: (i + 1) as f64 / ECE_BINS as f64,
                count,
                mean_confidence: conf / n,
                mean_accuracy: acc / n,
            }
        })
        .collect())
}

/// `Σ_b (n_b / N) |acc_b − conf_b|` over non-empty bins.
pub fn ece_from_bins(bins: &[Bin]) -> f64 {
    let total: usize = bins.iter().map(|b| b.count).sum();
    bins.iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / total as f64 * (b.mean_accuracy - b.mean_confidence).abs())
        .sum()
}

pub fn ece(confidences: &[f64], correct: &[bool]) -> Result<f64> {
    let acc: Vec<f64> = correct.iter().map(|&c| f64::from(u8::from(c))).collect();
    Ok(ece_from_bins(&bin_table(confidences, &acc)?))
}

/// ECE against a fixed per-prediction target accuracy. Uniform noise inputs
/// have no correct label; a calibrated model should then be right `1/C` of
/// the time, so `target = 1/C`.
pub fn ece_with_target(confidences: &[f64], target: f64) -> Result<f64> {
    let acc = vec![target; confidences.len()];
    Ok(ece_from_bins(&bin_table(confidences, &acc)?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NllAccuracy {
    pub nll: f64,
    pub accuracy: f64,
    /// Rows whose true-class probability was clamped to the floor.
    pub clamped: usize,
}

pub fn nll_and_accuracy(probabilities: &[Vec<f64>], labels: &[usize]) -> Result<NllAccuracy> {
    if probabilities.is_empty() {
        return Err(Error::Empty("nll input"));
    }
    if probabilities.len() != labels.len() {
        return Err(Error::shape("nll_and_accuracy", &[probabilities.len()], &[labels.len()]));
    }
    let mut nll = 0.0;
    let mut hits = 0;
    let mut clamped = 0;
    for (p, &y) in probabilities.iter().zip(labels) {
        let py = *p.get(y).ok_or(Error::MissingClass(y))?;
        if py < PROB_FLOOR {
            clamped += 1;
        }
        nll -= py.max(PROB_FLOOR).ln();
        hits += usize::from(argmax(p) == y);
    }
    let n = labels.len() as f64;
    Ok(NllAccuracy {
        nll: nll / n,
        accuracy: hits as f64 / n,
        clamped,
    })
}

/// `log Σ_c exp(logit_c)`; higher means more in-distribution.
pub fn energy_score(logits: &[f64]) -> f64 {
    logsumexp(logits)
}

/// Average (1-based) ranks with ties sharing their mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = 0.5 * ((i + 1) + (j + 1)) as f64;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// `(AUROC, AUPR)` separating ID (positive, higher score) from OOD scores.
pub fn auroc_aupr(id: &[f64], ood: &[f64]) -> Result<(f64, f64)> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::Empty("auroc scores"));
    }
    let (n1, n0) = (id.len() as f64, ood.len() as f64);
    let all: Vec<f64> = id.iter().chain(ood).copied().collect();
    let ranks = average_ranks(&all);
    let rank_sum: f64 = ranks[..id.len()].iter().sum();
    let auroc = (rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0);

    let mut scored: Vec<(f64, bool)> = id.iter().map(|&s| (s, true)).chain(ood.iter().map(|&s| (s, false))).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut prev_recall = 0.0;
    let mut aupr = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let threshold = scored[i].0;
        while i < scored.len() && scored[i].0 == threshold {
            if scored[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let recall = tp / n1;
        aupr += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
    }
    Ok((auroc, aupr))
}

/// Aggregate report of one evaluation run.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationReport {
    pub episodes: usize,
    pub accuracy: f64,
    pub nll: f64,
    pub ece: f64,
    pub ood_ece: f64,
    pub auroc: f64,
    pub aupr: f64,
    pub clamped: usize,
    pub bins: Vec<Bin>,
    pub ood_bins: Vec<Bin>,
}

/// Raw per-prediction material for a [`CalibrationReport`].
#[derive(Clone, Debug, Default)]
pub struct PredictionLog {
    pub id_probabilities: Vec<Vec<f64>>,
    pub id_labels: Vec<usize>,
    pub id_scores: Vec<f64>,
    pub ood_probabilities: Vec<Vec<f64>>,
    pub ood_scores: Vec<f64>,
}

fn max_prob(p: &[f64]) -> f64 {
    p.iter().copied().fold(0.0, f64::max).min(1.0)
}

impl CalibrationReport {
    pub fn from_log(log: &PredictionLog, episodes: usize) -> Result<Self> {
        let fit = nll_and_accuracy(&log.id_probabilities, &log.id_labels)?;
        let conf: Vec<f64> = log.id_probabilities.iter().map(|p| max_prob(p)).collect();
        let correct: Vec<f64> = log
            .id_probabilities
            .iter()
            .zip(&log.id_labels)
            .map(|(p, &y)| f64::from(u8::from(argmax(p) == y)))
            .collect();
        let bins = bin_table(&conf, &correct)?;
        let ways = log.id_probabilities[0].len();
        let ood_conf: Vec<f64> = log.ood_probabilities.iter().map(|p| max_prob(p)).collect();
        let ood_bins = bin_table(&ood_conf, &vec![1.0 / ways as f64; ood_conf.len()])?;
        let (auroc, aupr) = auroc_aupr(&log.id_scores, &log.ood_scores)?;
        Ok(CalibrationReport {
            episodes,
            accuracy: fit.accuracy,
            nll: fit.nll,
            ece: ece_from_bins(&bins),
            ood_ece: ece_from_bins(&ood_bins),
            auroc,
            aupr,
            clamped: fit.clamped,
            bins,
            ood_bins,
        })
    }
}
