use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use super::inference::{logsumexp, softmax_into};
use crate::error::{Error, Result};
use crate::rng;

/// Probabilities below this are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// What the temperature search needs from one validation query.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryRecord {
    pub logit_means: Vec<f64>,
    /// `−log Σ_c exp(−d²_c)` at `T = 1`, before the `ε` floor.
    pub raw_energy: f64,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemperatureSearch {
    pub temperature: u32,
    /// `true` when the loop hit `T_max` without meeting the condition.
    pub capped: bool,
    pub deterministic_nll: f64,
    pub sampled_nll: f64,
}

fn deterministic_nll(records: &[QueryRecord]) -> f64 {
    let total: f64 = records
        .iter()
        .map(|r| {
            let log_p = r.logit_means[r.label] - logsumexp(&r.logit_means);
            -log_p.max(PROB_FLOOR.ln())
        })
        .sum();
    total / records.len() as f64
}

/// Mean sampled-predictive NLL at temperature `t`. The same seed is used for
/// every `t`, so successive temperatures are compared on common noise.
fn sampled_nll(records: &[QueryRecord], t: f64, epsilon: f64, samples: usize, seed: u64) -> f64 {
    let mut rng = rng::Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut omega = Vec::new();
    let mut p = Vec::new();
    for r in records {
        let c = r.logit_means.len();
        omega.resize(c, 0.0);
        p.resize(c, 0.0);
        let sigma = (r.raw_energy / t).max(epsilon);
        let mut p_true = 0.0;
        for _ in 0..samples {
            for (o, m) in omega.iter_mut().zip(&r.logit_means) {
                let z: f64 = rng.sample(StandardNormal);
                *o = m + sigma * z;
            }
            softmax_into(&omega, &mut p);
            p_true += p[r.label];
        }
        total -= (p_true / samples as f64).max(PROB_FLOOR).ln();
    }
    total / records.len() as f64
}

/// Smallest integer `T ≥ 1` whose sampled NLL does not exceed the NLL of the
/// deterministic logits, searched by unit increments up to `t_max`.
pub fn tune_temperature(
    records: &[QueryRecord],
    epsilon: f64,
    samples: usize,
    t_max: u32,
    seed: u64,
) -> Result<TemperatureSearch> {
    if records.is_empty() {
        return Err(Error::Empty("validation queries"));
    }
    if t_max == 0 || samples == 0 {
        return Err(Error::invalid("tune_temperature", "t_max and samples must be positive"));
    }
    let det = deterministic_nll(records);
    let mut sampled = f64::NAN;
    for t in 1..=t_max {
        sampled = sampled_nll(records, f64::from(t), epsilon, samples, seed);
        if sampled <= det {
            return Ok(TemperatureSearch {
                temperature: t,
                capped: false,
                deterministic_nll: det,
                sampled_nll: sampled,
            });
        }
    }
    log::warn!("temperature search reached T_max = {t_max} (sampled NLL {sampled:.4} > deterministic {det:.4})");
    Ok(TemperatureSearch {
        temperature: t_max,
        capped: true,
        deterministic_nll: det,
        sampled_nll: sampled,
    })
}

/// Mean NLL of `softmax(logits / tau)`.
pub fn scaled_nll(logits: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
    let mut scaled = Vec::new();
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(row, &y)| {
            scaled.clear();
            scaled.extend(row.iter().map(|v| v / tau));
            -(scaled[y] - logsumexp(&scaled)).max(PROB_FLOOR.ln())
        })
        .sum();
    total / logits.len() as f64
}

pub const TAU_RANGE: (f64, f64) = (0.05, 20.0);

/// Temperature `τ` minimizing the NLL of `softmax(logits / τ)`, by
/// golden-section search over [`TAU_RANGE`] to a bracket of `1e-4`.
pub fn baseline_temperature_scale(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(Error::invalid("baseline_temperature_scale", "need one label per logit row"));
    }
    if logits.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("baseline logits".into()));
    }
    let f = |tau: f64| scaled_nll(logits, labels, tau);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = TAU_RANGE;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-4 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    Ok(0.5 * (a + b))
}
