//! Classification heads over a shared residual feature extractor.
//!
//! The ProtoMahalanobis head builds one `diag(Λ_c) + Φ_cΦ_cᵀ` covariance per
//! class from the class's support features and predicts through a
//! logit-normal distribution whose scale grows with the energy of the query.
//! The baseline heads (Euclidean prototypes and empirical shrinkage
//! covariances) read out a temperature-scaled softmax.

mod inference;
mod persist;
mod temperature;

pub use inference::{
    argmax, energy_scale, entropy, euclidean_logits, logsumexp, mahalanobis_logits, predict, raw_energy,
    sample_probabilities, softmax, squared_distances, LogitNormalPrediction,
};
pub use temperature::{
    baseline_temperature_scale, scaled_nll, tune_temperature, QueryRecord, TemperatureSearch, PROB_FLOOR, TAU_RANGE,
};

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{recursive_inverse_logdet, LowRankCovariance};
use crate::nets::{EncoderConfig, Extractor, ExtractorConfig, SetEncoder};
use crate::rng::{stream_rng, Stream};
use crate::tasks::Task;
use crate::tensor::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShrinkageVariant {
    /// One covariance per class.
    PerClass,
    /// One covariance pooled over all classes of the episode.
    Shared,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeadKind {
    ProtoMahalanobis { rank: usize },
    ProtonetEuclidean,
    ProtonetEuclideanSN,
    EmpiricalShrinkage(ShrinkageVariant),
}

impl HeadKind {
    pub const NAMES: [&'static str; 5] =
        ["proto-mahalanobis", "protonet", "protonet-sn", "shrinkage-per-class", "shrinkage-shared"];

    /// Parses a CLI head name; `rank` only applies to `proto-mahalanobis`.
    pub fn parse(name: &str, rank: usize) -> Result<Self> {
        Ok(match name {
            "proto-mahalanobis" => HeadKind::ProtoMahalanobis { rank },
            "protonet" => HeadKind::ProtonetEuclidean,
            "protonet-sn" => HeadKind::ProtonetEuclideanSN,
            "shrinkage-per-class" => HeadKind::EmpiricalShrinkage(ShrinkageVariant::PerClass),
            "shrinkage-shared" => HeadKind::EmpiricalShrinkage(ShrinkageVariant::Shared),
            other => {
                return Err(Error::invalid(
                    "head",
                    format!("unknown head {other:?} (expected one of {})", Self::NAMES.join(", ")),
                ))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            HeadKind::ProtoMahalanobis { .. } => "proto-mahalanobis",
            HeadKind::ProtonetEuclidean => "protonet",
            HeadKind::ProtonetEuclideanSN => "protonet-sn",
            HeadKind::EmpiricalShrinkage(ShrinkageVariant::PerClass) => "shrinkage-per-class",
            HeadKind::EmpiricalShrinkage(ShrinkageVariant::Shared) => "shrinkage-shared",
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            HeadKind::ProtoMahalanobis { rank } => *rank,
            _ => 0,
        }
    }

    pub fn uses_spectral_norm(&self) -> bool {
        !matches!(self, HeadKind::ProtonetEuclidean)
    }

    pub fn is_logit_normal(&self) -> bool {
        matches!(self, HeadKind::ProtoMahalanobis { .. })
    }

    fn code(&self) -> [f64; 2] {
        match self {
            HeadKind::ProtoMahalanobis { rank } => [0.0, *rank as f64],
            HeadKind::ProtonetEuclidean => [1.0, 0.0],
            HeadKind::ProtonetEuclideanSN => [2.0, 0.0],
            HeadKind::EmpiricalShrinkage(ShrinkageVariant::PerClass) => [3.0, 0.0],
            HeadKind::EmpiricalShrinkage(ShrinkageVariant::Shared) => [4.0, 0.0],
        }
    }

    fn from_code(code: &[f64]) -> Result<Self> {
        let bad = || Error::Checkpoint(format!("invalid head code {code:?}"));
        let (&kind, &rank) = match code {
            [k, r] => (k, r),
            _ => return Err(bad()),
        };
        if rank < 0.0 || rank.fract() != 0.0 {
            return Err(bad());
        }
        Ok(match kind as i64 {
            0 => HeadKind::ProtoMahalanobis { rank: rank as usize },
            1 => HeadKind::ProtonetEuclidean,
            2 => HeadKind::ProtonetEuclideanSN,
            3 => HeadKind::EmpiricalShrinkage(ShrinkageVariant::PerClass),
            4 => HeadKind::EmpiricalShrinkage(ShrinkageVariant::Shared),
            _ => return Err(bad()),
        })
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadKind::ProtoMahalanobis { rank: 0 } => f.write_str("ProtoMahalanobis (diag)"),
            HeadKind::ProtoMahalanobis { rank } => write!(f, "ProtoMahalanobis (rank {rank})"),
            HeadKind::ProtonetEuclidean => f.write_str("Protonet"),
            HeadKind::ProtonetEuclideanSN => f.write_str("Protonet-SN"),
            HeadKind::EmpiricalShrinkage(ShrinkageVariant::PerClass) => f.write_str("Shrinkage (per-class)"),
            HeadKind::EmpiricalShrinkage(ShrinkageVariant::Shared) => f.write_str("Shrinkage (shared)"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub head: HeadKind,
    pub input_dim: usize,
    pub feature_dim: usize,
    pub depth: usize,
    /// Spectral bound `c` used by every head except plain Protonet.
    pub spectral_bound: f64,
    pub encoder_hidden: usize,
    pub encoder_heads: usize,
    pub encoder_blocks: usize,
    pub factor_gain: f64,
    /// Lower clamp of the squashed diagonal `Λ`.
    pub diag_floor: f64,
    /// Floor `ε` of the logit scale `σ̃`.
    pub epsilon: f64,
}

impl ModelConfig {
    pub fn new(head: HeadKind) -> Self {
        ModelConfig {
            head,
            input_dim: 2,
            feature_dim: 16,
            depth: 3,
            spectral_bound: 3.0,
            encoder_hidden: 32,
            encoder_heads: 4,
            encoder_blocks: 2,
            factor_gain: 0.1,
            diag_floor: 0.1,
            epsilon: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::invalid("model config", reason));
        if self.input_dim == 0 || self.feature_dim == 0 {
            return fail("input and feature dims must be positive".into());
        }
        if !(self.spectral_bound > 0.0) {
            return fail(format!("spectral bound {} must be positive", self.spectral_bound));
        }
        if self.encoder_heads == 0 || self.encoder_hidden % self.encoder_heads != 0 {
            return fail(format!(
                "encoder hidden dim {} must be a multiple of {} heads",
                self.encoder_hidden, self.encoder_heads
            ));
        }
        if !(self.diag_floor > 0.0 && self.diag_floor < 1.0) {
            return fail(format!("diag floor {} outside (0, 1)", self.diag_floor));
        }
        if !(self.epsilon > 0.0) {
            return fail(format!("epsilon {} must be positive", self.epsilon));
        }
        Ok(())
    }

    fn extractor(&self) -> ExtractorConfig {
        ExtractorConfig {
            input_dim: self.input_dim,
            feature_dim: self.feature_dim,
            depth: self.depth,
            spectral_bound: self.head.uses_spectral_norm().then_some(self.spectral_bound),
        }
    }

    fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            feature_dim: self.feature_dim,
            hidden_dim: self.encoder_hidden,
            heads: self.encoder_heads,
            blocks: self.encoder_blocks,
            rank: self.head.rank(),
            factor_gain: self.factor_gain,
        }
    }
}

/// Frozen per-class quantities for one episode.
#[derive(Clone, Debug)]
pub struct ClassState {
    pub prototype: Vec<f64>,
    /// `Σ_c⁻¹`.
    pub precision: Tensor,
    pub logdet: f64,
    pub covariance: Option<LowRankCovariance>,
}

impl ClassState {
    pub fn from_covariance(prototype: Vec<f64>, covariance: LowRankCovariance) -> Self {
        ClassState {
            prototype,
            precision: covariance.inverse().clone(),
            logdet: covariance.logdet(),
            covariance: Some(covariance),
        }
    }

    pub fn from_precision(prototype: Vec<f64>, precision: Tensor, logdet: f64) -> Self {
        ClassState {
            prototype,
            precision,
            logdet,
            covariance: None,
        }
    }
}

/// Per-class graph nodes.
struct ClassVars<'t> {
    prototype: Var<'t>,
    precision: Option<Var<'t>>,
    logdet: Option<Var<'t>>,
    diag: Option<Var<'t>>,
    factors: Option<Var<'t>>,
}

/// Loss, accuracy and per-parameter gradients of one training episode.
#[derive(Clone, Debug)]
pub struct EpisodeStep {
    pub loss: f64,
    pub accuracy: f64,
    pub gradients: Vec<Tensor>,
}

/// Mean cross-entropy of `logits` (`N × C`) against `labels`.
pub fn episode_loss<'t>(logits: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() || shape[0] == 0 {
        return Err(Error::shape("episode_loss", &shape, &[labels.len()]));
    }
    let c = shape[1];
    let mut onehot = Tensor::zeros(&[labels.len(), c]);
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::MissingClass(y));
        }
        onehot.set(i, y, 1.0);
    }
    let picked = logits.mul(logits.tape().constant(onehot))?.sum_axis(1, false)?;
    let loss = logits.logsumexp(1, false)?.sub(picked)?.mean_all();
    let value = loss.value().item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("episode loss {value}")));
    }
    Ok(loss)
}

#[derive(Clone, Copy, Debug)]
struct Shrinkage {
    delta: ParamId,
    lambda: ParamId,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    extractor: Extractor,
    encoder: Option<SetEncoder>,
    shrinkage: Option<Shrinkage>,
    /// Energy temperature `T` of the logit-normal head.
    pub energy_temperature: u32,
    /// Softmax temperature `τ` of the baseline heads.
    pub logit_temperature: f64,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, Stream::Init, 0);
        Ok(Self::build(config, &mut rng))
    }

    fn build(config: ModelConfig, rng: &mut impl Rng) -> Self {
        let mut params = ParamStore::new();
        let extractor = Extractor::new(&mut params, "extractor", config.extractor(), rng);
        let encoder = config
            .head
            .is_logit_normal()
            .then(|| SetEncoder::new(&mut params, "encoder", config.encoder(), rng));
        let shrinkage = matches!(config.head, HeadKind::EmpiricalShrinkage(_)).then(|| Shrinkage {
            delta: params.insert("head.delta", Tensor::scalar(0.0)),
            // softplus(λ) starts at 1
            lambda: params.insert("head.lambda", Tensor::filled(&[config.feature_dim], (std::f64::consts::E - 1.0).ln())),
        });
        Model {
            config,
            params,
            extractor,
            encoder,
            shrinkage,
            energy_temperature: 1,
            logit_temperature: 1.0,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn head(&self) -> HeadKind {
        self.config.head
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn extractor(&self) -> &Extractor {
        &self.extractor
    }

    pub fn extractor_mut(&mut self) -> &mut Extractor {
        &mut self.extractor
    }

    fn check_task(&self, task: &Task) -> Result<()> {
        if task.input_dim() != self.config.input_dim {
            return Err(Error::shape("task input", &[task.input_dim()], &[self.config.input_dim]));
        }
        for c in 0..task.ways {
            if !task.support.iter().any(|s| s.label == c) {
                return Err(Error::MissingClass(c));
            }
        }
        Ok(())
    }

    fn class_vars<'t>(&mut self, params: &Bound<'t>, zs: Var<'t>, ways: usize, shots: usize) -> Result<Vec<ClassVars<'t>>> {
        let floor = self.config.diag_floor;
        let mut classes = Vec::with_capacity(ways);
        let mut centered = Vec::with_capacity(ways);
        for c in 0..ways {
            let zc = zs.slice(0, c * shots, shots)?;
            let prototype = zc.mean_axis(0, true)?;
            let set = if shots > 1 { zc.sub(prototype)? } else { zc };
            centered.push(set);
            classes.push(ClassVars {
                prototype,
                precision: None,
                logdet: None,
                diag: None,
                factors: None,
            });
        }
        match self.config.head {
            HeadKind::ProtonetEuclidean | HeadKind::ProtonetEuclideanSN => {}
            HeadKind::ProtoMahalanobis { .. } => {
                let encoder = self.encoder.as_mut().expect("logit-normal head has an encoder");
                for (class, set) in classes.iter_mut().zip(&centered) {
                    let enc = encoder.encode(params, *set)?;
                    let diag = enc.diag_logits.sigmoid().max_const(floor);
                    let (inv, logdet) = recursive_inverse_logdet(diag, enc.factors)?;
                    class.precision = Some(inv);
                    class.logdet = Some(logdet);
                    class.diag = Some(diag);
                    class.factors = Some(enc.factors);
                }
            }
            HeadKind::EmpiricalShrinkage(variant) => {
                let shrink = self.shrinkage.expect("shrinkage head has mixing parameters");
                let raw_delta = params.var(shrink.delta);
                let delta = raw_delta.sigmoid();
                let diag = params.var(shrink.lambda).softplus().mul(delta)?;
                // sqrt(1 − δ) = exp(½ log σ(−p))
                let keep = raw_delta.neg().sigmoid().log().scale(0.5).exp();
                let factor_of = |sets: &[Var<'t>]| -> Result<Var<'t>> {
                    let n: usize = sets.iter().map(|s| s.shape()[0]).sum();
                    let stacked = if sets.len() == 1 { sets[0] } else { zs.tape().concat(sets, 0)? };
                    Ok(stacked.t()?.mul(keep)?.scale(1.0 / (n as f64).sqrt()))
                };
                match variant {
                    ShrinkageVariant::PerClass => {
                        for (class, set) in classes.iter_mut().zip(&centered) {
                            let factors = factor_of(std::slice::from_ref(set))?;
                            let (inv, logdet) = recursive_inverse_logdet(diag, factors)?;
                            class.precision = Some(inv);
                            class.logdet = Some(logdet);
                            class.diag = Some(diag);
                            class.factors = Some(factors);
                        }
                    }
                    ShrinkageVariant::Shared => {
                        let factors = factor_of(&centered)?;
                        let (inv, logdet) = recursive_inverse_logdet(diag, factors)?;
                        for class in &mut classes {
                            class.precision = Some(inv);
                            class.logdet = Some(logdet);
                            class.diag = Some(diag);
                            class.factors = Some(factors);
                        }
                    }
                }
            }
        }
        Ok(classes)
    }

    fn logits_graph<'t>(&self, classes: &[ClassVars<'t>], zq: Var<'t>) -> Result<Var<'t>> {
        let n = zq.shape()[0];
        let columns = classes
            .iter()
            .map(|class| {
                let delta = zq.sub(class.prototype)?;
                let logit = match (class.precision, class.logdet) {
                    (Some(precision), Some(logdet)) => delta
                        .matmul(precision)?
                        .mul(delta)?
                        .sum_axis(1, false)?
                        .scale(-0.5)
                        .sub(logdet.scale(0.5))?,
                    _ => delta.mul(delta)?.sum_axis(1, false)?.neg(),
                };
                logit.reshape(&[n, 1])
            })
            .collect::<Result<Vec<_>>>()?;
        zq.tape().concat(&columns, 1)
    }

    fn batch(rows: &[Vec<f64>]) -> Result<Tensor> {
        Tensor::from_rows(rows)
    }

    /// Records the full episode on `tape` and returns the `N × C` logits.
    pub fn episode_logits<'t>(&mut self, tape: &'t Tape, params: &Bound<'t>, task: &Task, train: bool) -> Result<Var<'t>> {
        self.check_task(task)?;
        let n_s = task.support.len();
        let n_q = task.query.len();
        if n_q == 0 {
            return Err(Error::Empty("query set"));
        }
        let mut rows = task.support_inputs();
        rows.extend(task.query_inputs());
        let x = tape.constant(Self::batch(&rows)?);
        let f = self.extractor.forward(params, x, train)?;
        let zs = f.slice(0, 0, n_s)?;
        let zq = f.slice(0, n_s, n_q)?;
        let classes = self.class_vars(params, zs, task.ways, task.shots)?;
        self.logits_graph(&classes, zq)
    }

    /// Training-mode loss with gradients for every parameter (power
    /// iteration state advances).
    pub fn train_step(&mut self, task: &Task) -> Result<EpisodeStep> {
        let tape = Tape::new();
        let params = self.params.bind(&tape, true);
        let logits = self.episode_logits(&tape, &params, task, true)?;
        let labels = task.query_labels();
        let loss = episode_loss(logits, &labels)?;
        let accuracy = accuracy_of(&logits.value(), &labels);
        let grads = tape.backward(loss)?;
        Ok(EpisodeStep {
            loss: loss.value().item(),
            accuracy,
            gradients: params.gradients(&grads),
        })
    }

    /// Evaluation-mode loss and gradients; leaves every buffer untouched.
    pub fn eval_loss_and_gradients(&mut self, task: &Task) -> Result<(f64, Vec<Tensor>)> {
        let tape = Tape::new();
        let params = self.params.bind(&tape, true);
        let logits = self.episode_logits(&tape, &params, task, false)?;
        let loss = episode_loss(logits, &task.query_labels())?;
        let grads = tape.backward(loss)?;
        Ok((loss.value().item(), params.gradients(&grads)))
    }

    pub fn eval_loss(&mut self, task: &Task) -> Result<f64> {
        let tape = Tape::new();
        let params = self.params.bind(&tape, false);
        let logits = self.episode_logits(&tape, &params, task, false)?;
        Ok(episode_loss(logits, &task.query_labels())?.value().item())
    }

    /// Evaluation-mode features, one row per input.
    pub fn features(&mut self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let tape = Tape::new();
        let params = self.params.bind(&tape, false);
        let x = tape.constant(Self::batch(inputs)?);
        let f = self.extractor.forward(&params, x, false)?.value();
        Ok((0..f.rows()).map(|i| f.row(i).to_vec()).collect())
    }

    /// Prototypes and covariances from a task's support set.
    pub fn class_states(&mut self, task: &Task) -> Result<Vec<ClassState>> {
        self.check_task(task)?;
        let tape = Tape::new();
        let params = self.params.bind(&tape, false);
        let x = tape.constant(Self::batch(&task.support_inputs())?);
        let zs = self.extractor.forward(&params, x, false)?;
        let classes = self.class_vars(&params, zs, task.ways, task.shots)?;
        let d = self.config.feature_dim;
        classes
            .iter()
            .map(|class| {
                let prototype = class.prototype.value().data().to_vec();
                match (class.diag, class.factors) {
                    (Some(diag), Some(factors)) => {
                        let cov = LowRankCovariance::new(diag.value().data().to_vec(), (*factors.value()).clone())?;
                        Ok(ClassState::from_covariance(prototype, cov))
                    }
                    _ => Ok(ClassState::from_covariance(prototype, LowRankCovariance::identity(d))),
                }
            })
            .collect()
    }

    /// Deterministic logits: `E[ω]` for the logit-normal head, raw
    /// (unscaled by `τ`) logits for the baselines.
    pub fn logits(&self, states: &[ClassState], z: &[f64]) -> Result<Vec<f64>> {
        match self.config.head {
            HeadKind::ProtonetEuclidean | HeadKind::ProtonetEuclideanSN => {
                if states.is_empty() {
                    return Err(Error::Empty("class states"));
                }
                Ok(euclidean_logits(states, z))
            }
            _ => mahalanobis_logits(states, z),
        }
    }

    /// Predictive class probabilities for one query feature.
    pub fn predictive(&self, states: &[ClassState], z: &[f64], samples: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
        if self.config.head.is_logit_normal() {
            Ok(predict(states, z, self.energy_temperature, samples, self.config.epsilon, rng)?.probabilities)
        } else {
            let scaled: Vec<f64> = self.logits(states, z)?.iter().map(|v| v / self.logit_temperature).collect();
            Ok(softmax(&scaled))
        }
    }

    pub fn query_record(&self, states: &[ClassState], z: &[f64], label: usize) -> Result<QueryRecord> {
        Ok(QueryRecord {
            logit_means: self.logits(states, z)?,
            raw_energy: raw_energy(&squared_distances(states, z)?, 1.0),
            label,
        })
    }

    /// `(name, tensor)` pairs of every persistent buffer.
    pub fn buffers(&self) -> Vec<(String, Tensor)> {
        self.extractor.buffers()
    }
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy_of(logits: &Tensor, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(i, &y)| argmax(logits.row(*i)) == y)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{sample_task, DatasetKind, Normalization, Sample, TaskConfig, TaskInfo};

    fn tiny(head: HeadKind) -> Model {
        let mut cfg = ModelConfig::new(head);
        cfg.feature_dim = 4;
        cfg.encoder_hidden = 8;
        cfg.encoder_heads = 2;
        Model::new(cfg, 0).unwrap()
    }

    fn hand_task() -> Task {
        let pts = [[0.0, 0.0], [0.5, 0.1], [2.0, 2.0], [2.5, 1.5]];
        let support = pts
            .iter()
            .enumerate()
            .map(|(i, p)| Sample { x: p.to_vec(), label: i / 2 })
            .collect();
        let query = vec![Sample { x: vec![0.2, 0.0], label: 0 }, Sample { x: vec![2.1, 1.9], label: 1 }];
        Task {
            ways: 2,
            shots: 2,
            support,
            query,
            normalization: Normalization { mean: vec![0.0; 2], var: vec![1.0; 2] },
            info: TaskInfo { noise_std: 0.0, circle_scale: None, class_order: vec![0, 1] },
        }
    }

    #[test]
    fn head_names_round_trip() {
        for name in HeadKind::NAMES {
            let head = HeadKind::parse(name, 2).unwrap();
            assert_eq!(head.name(), name);
            assert_eq!(HeadKind::from_code(&head.code()).unwrap(), head);
        }
        assert!(HeadKind::parse("gp", 0).is_err());
    }

    #[test]
    fn prototypes_are_class_means() {
        let mut model = tiny(HeadKind::ProtoMahalanobis { rank: 1 });
        let task = hand_task();
        let states = model.class_states(&task).unwrap();
        let feats = model.features(&task.support_inputs()).unwrap();
        for (c, state) in states.iter().enumerate() {
            for j in 0..4 {
                let mean = 0.5 * (feats[2 * c][j] + feats[2 * c + 1][j]);
                assert!((state.prototype[j] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn diag_respects_floor_and_one() {
        let mut model = tiny(HeadKind::ProtoMahalanobis { rank: 0 });
        for s in model.class_states(&hand_task()).unwrap() {
            let cov = s.covariance.unwrap();
            assert!(cov.diag().iter().all(|&v| (0.1..1.0).contains(&v)));
        }
    }

    #[test]
    fn graph_logits_match_state_logits() {
        for head in [
            HeadKind::ProtoMahalanobis { rank: 1 },
            HeadKind::ProtonetEuclidean,
            HeadKind::EmpiricalShrinkage(ShrinkageVariant::PerClass),
            HeadKind::EmpiricalShrinkage(ShrinkageVariant::Shared),
        ] {
            let mut model = tiny(head);
            let task = hand_task();
            let tape = Tape::new();
            let params = model.params.bind(&tape, false);
            let logits = model.episode_logits(&tape, &params, &task, false).unwrap().value();
            let states = model.class_states(&task).unwrap();
            let feats = model.features(&task.query_inputs()).unwrap();
            for (i, z) in feats.iter().enumerate() {
                let l = model.logits(&states, z).unwrap();
                for c in 0..2 {
                    assert!((l[c] - logits.at(i, c)).abs() < 1e-9, "{head}");
                }
            }
        }
    }

    #[test]
    fn loss_matches_scalar_cross_entropy() {
        let mut model = tiny(HeadKind::ProtoMahalanobis { rank: 1 });
        let task = hand_task();
        let loss = model.eval_loss(&task).unwrap();
        let states = model.class_states(&task).unwrap();
        let feats = model.features(&task.query_inputs()).unwrap();
        let mut oracle = 0.0;
        for (z, s) in feats.iter().zip(&task.query) {
            let l = model.logits(&states, z).unwrap();
            let lse = (l[0].exp() + l[1].exp()).ln();
            oracle += lse - l[s.label];
        }
        oracle /= 2.0;
        assert!((loss - oracle).abs() < 1e-10);
    }

    #[test]
    fn uniform_logits_give_log_two() {
        let tape = Tape::new();
        let logits = tape.constant(Tensor::zeros(&[3, 2]));
        let loss = episode_loss(logits, &[0, 1, 1]).unwrap();
        assert!((loss.value().item() - 2f64.ln()).abs() < 1e-15);
        assert!(episode_loss(logits, &[0, 2, 1]).is_err());
    }

    #[test]
    fn one_shot_states_use_raw_features() {
        let mut model = tiny(HeadKind::ProtoMahalanobis { rank: 1 });
        let mut cfg = TaskConfig::new(DatasetKind::Moons);
        cfg.shots = 1;
        let task = sample_task(&cfg, &mut stream_rng(0, Stream::Train, 0)).unwrap();
        let states = model.class_states(&task).unwrap();
        let feats = model.features(&task.support_inputs()).unwrap();
        assert_eq!(states[0].prototype, feats[0]);
        assert_eq!(states[1].prototype, feats[1]);
    }

    #[test]
    fn missing_class_is_an_error() {
        let mut model = tiny(HeadKind::ProtonetEuclidean);
        let mut task = hand_task();
        task.support.iter_mut().for_each(|s| s.label = 0);
        assert!(matches!(model.class_states(&task), Err(Error::MissingClass(1))));
    }

    #[test]
    fn train_step_updates_power_iteration_only_in_training() {
        let mut model = tiny(HeadKind::ProtoMahalanobis { rank: 0 });
        let task = hand_task();
        let before = model.buffers();
        model.eval_loss(&task).unwrap();
        assert_eq!(model.buffers(), before);
        let step = model.train_step(&task).unwrap();
        assert_ne!(model.buffers(), before);
        assert_eq!(step.gradients.len(), model.params().len());
        assert!(step.loss.is_finite());
    }
}
