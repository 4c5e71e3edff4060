use rand::Rng;
use rand_distr::StandardNormal;

use super::ClassState;
use crate::error::{Error, Result};
use crate::linalg::quadratic_form;

/// Numerically stable `log Σ exp(x)`.
pub fn logsumexp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m == f64::INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let lse = logsumexp(x);
    x.iter().map(|v| (v - lse).exp()).collect()
}

pub fn softmax_into(x: &[f64], out: &mut [f64]) {
    let lse = logsumexp(x);
    for (o, v) in out.iter_mut().zip(x) {
        *o = (v - lse).exp();
    }
}

/// Index of the largest entry, ties going to the lowest index.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

fn delta(state: &ClassState, z: &[f64]) -> Vec<f64> {
    z.iter().zip(&state.prototype).map(|(a, b)| a - b).collect()
}

/// `(z − μ_c)ᵀ Σ_c⁻¹ (z − μ_c)` for every class.
pub fn squared_distances(states: &[ClassState], z: &[f64]) -> Result<Vec<f64>> {
    states
        .iter()
        .map(|s| quadratic_form(&s.precision, &delta(s, z)))
        .collect()
}

/// `−½ d²_c − ½ log|Σ_c|`.
pub fn mahalanobis_logits(states: &[ClassState], z: &[f64]) -> Result<Vec<f64>> {
    if states.is_empty() {
        return Err(Error::Empty("class states"));
    }
    Ok(squared_distances(states, z)?
        .iter()
        .zip(states)
        .map(|(d2, s)| -0.5 * d2 - 0.5 * s.logdet)
        .collect())
}

/// `−‖z − μ_c‖²`.
pub fn euclidean_logits(states: &[ClassState], z: &[f64]) -> Vec<f64> {
    states
        .iter()
        .map(|s| -delta(s, z).iter().map(|v| v * v).sum::<f64>())
        .collect()
}

/// Unfloored energy `−log Σ_c exp(−d²_c)` divided by `T`.
pub fn raw_energy(squared_distances: &[f64], temperature: f64) -> f64 {
    let neg: Vec<f64> = squared_distances.iter().map(|d| -d).collect();
    -logsumexp(&neg) / temperature
}

/// `σ̃ = max(ε, −(1/T) log Σ_c exp(−d²_c))`; log-determinants do not enter.
pub fn energy_scale(states: &[ClassState], z: &[f64], temperature: f64, epsilon: f64) -> Result<f64> {
    if temperature < 1.0 {
        return Err(Error::invalid("energy_scale", format!("temperature {temperature} below 1")));
    }
    Ok(raw_energy(&squared_distances(states, z)?, temperature).max(epsilon))
}

/// Mean of `softmax(ω)` over `samples` draws of `ω_c ~ N(μ̃_c, σ̃²)`.
pub fn sample_probabilities(means: &[f64], sigma: f64, samples: usize, rng: &mut impl Rng) -> Vec<f64> {
    let c = means.len();
    let mut acc = vec![0.0; c];
    let mut omega = vec![0.0; c];
    let mut p = vec![0.0; c];
    for _ in 0..samples {
        for (o, m) in omega.iter_mut().zip(means) {
            let z: f64 = rng.sample(StandardNormal);
            *o = m + sigma * z;
        }
        softmax_into(&omega, &mut p);
        for (a, v) in acc.iter_mut().zip(&p) {
            *a += v;
        }
    }
    let inv = 1.0 / samples as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

/// A logit-normal predictive distribution for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitNormalPrediction {
    pub logit_means: Vec<f64>,
    pub scale: f64,
    pub temperature: u32,
    pub samples: usize,
    pub probabilities: Vec<f64>,
}

pub fn predict(
    states: &[ClassState],
    z: &[f64],
    temperature: u32,
    samples: usize,
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<LogitNormalPrediction> {
    if samples == 0 {
        return Err(Error::invalid("predict", "need at least one sample"));
    }
    let logit_means = mahalanobis_logits(states, z)?;
    let scale = energy_scale(states, z, f64::from(temperature), epsilon)?;
    let probabilities = sample_probabilities(&logit_means, scale, samples, rng);
    Ok(LogitNormalPrediction {
        logit_means,
        scale,
        temperature,
        samples,
        probabilities,
    })
}
