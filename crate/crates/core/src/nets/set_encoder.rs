//! Attentive set encoder mapping a class's (centered) support features to a
//! raw diagonal and low-rank covariance factors.
//!
//! Two self-attention blocks are followed by attention pooling onto one
//! learned seed. The pooling block keeps the feed-forward residual but drops
//! the residual addition of its query, so the pooled vector is a pure
//! attention average of the set.

use rand::Rng;
use rand_distr::StandardNormal;

use super::SpectralLinear;
use crate::error::{Error, Result};
use crate::tensor::{Bound, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub rank: usize,
    /// Multiplier on the factor head output.
    pub factor_gain: f64,
}

impl EncoderConfig {
    pub fn for_features(feature_dim: usize, rank: usize) -> Self {
        EncoderConfig {
            feature_dim,
            hidden_dim: 32,
            heads: 4,
            blocks: 2,
            rank,
            factor_gain: 0.1,
        }
    }
}

fn linear(store: &mut ParamStore, name: &str, i: usize, o: usize, rng: &mut impl Rng) -> SpectralLinear {
    SpectralLinear::new(store, name, i, o, None, rng)
}

/// Multihead attention block `H = [Q +] softmax(QKᵀ/√dₖ)V`, `out = H + relu(rFF(H))`.
#[derive(Clone, Debug)]
struct AttentionBlock {
    query: SpectralLinear,
    key: SpectralLinear,
    value: SpectralLinear,
    feed_forward: SpectralLinear,
    heads: usize,
    residual_query: bool,
}

impl AttentionBlock {
    fn new(store: &mut ParamStore, prefix: &str, dim: usize, heads: usize, residual_query: bool, rng: &mut impl Rng) -> Self {
        AttentionBlock {
            query: linear(store, &format!("{prefix}.query"), dim, dim, rng),
            key: linear(store, &format!("{prefix}.key"), dim, dim, rng),
            value: linear(store, &format!("{prefix}.value"), dim, dim, rng),
            feed_forward: linear(store, &format!("{prefix}.ff"), dim, dim, rng),
            heads,
            residual_query,
        }
    }

    fn attend<'t>(&mut self, params: &Bound<'t>, x: Var<'t>, y: Var<'t>) -> Result<Var<'t>> {
        let q = self.query.forward(params, x, false)?;
        let k = self.key.forward(params, y, false)?;
        let v = self.value.forward(params, y, false)?;
        let dim = q.shape()[1];
        let head_dim = dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outputs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.slice(1, h * head_dim, head_dim)?;
            let kh = k.slice(1, h * head_dim, head_dim)?;
            let vh = v.slice(1, h * head_dim, head_dim)?;
            let weights = qh.matmul(kh.t()?)?.scale(scale).softmax(1)?;
            outputs.push(weights.matmul(vh)?);
        }
        let attended = q.tape().concat(&outputs, 1)?;
        let h = if self.residual_query { q.add(attended)? } else { attended };
        let ff = self.feed_forward.forward(params, h, false)?.relu();
        h.add(ff)
    }
}

#[derive(Clone, Debug)]
pub struct SetEncoder {
    config: EncoderConfig,
    embed: SpectralLinear,
    blocks: Vec<AttentionBlock>,
    pool: AttentionBlock,
    seed: ParamId,
    diag_head: SpectralLinear,
    factor_head: Option<SpectralLinear>,
}

/// Raw encoder outputs for one class set.
pub struct EncodedCovariance<'t> {
    /// Shape `[d]`, squashed downstream by the truncated sigmoid.
    pub diag_logits: Var<'t>,
    /// Shape `[d, r]`, already multiplied by the factor gain.
    pub factors: Var<'t>,
}

impl SetEncoder {
    pub fn new(store: &mut ParamStore, prefix: &str, config: EncoderConfig, rng: &mut impl Rng) -> Self {
        assert!(
            config.hidden_dim % config.heads == 0,
            "hidden dim {} not divisible by {} heads",
            config.hidden_dim,
            config.heads
        );
        let dh = config.hidden_dim;
        let embed = linear(store, &format!("{prefix}.embed"), config.feature_dim, dh, rng);
        let blocks = (0..config.blocks)
            .map(|i| AttentionBlock::new(store, &format!("{prefix}.sab{i}"), dh, config.heads, true, rng))
            .collect();
        let pool = AttentionBlock::new(store, &format!("{prefix}.pma"), dh, config.heads, false, rng);
        let seed_values = (0..dh).map(|_| rng.sample(StandardNormal)).collect();
        let seed = store.insert(format!("{prefix}.pma.seed"), Tensor::matrix(1, dh, seed_values).expect("sized"));
        let diag_head = linear(store, &format!("{prefix}.diag_head"), dh, config.feature_dim, rng);
        let factor_head = (config.rank > 0).then(|| {
            linear(store, &format!("{prefix}.factor_head"), dh, config.feature_dim * config.rank, rng)
        });
        SetEncoder {
            config,
            embed,
            blocks,
            pool,
            seed,
            diag_head,
            factor_head,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Pooled `1 × hidden` summary of an `n × d` set.
    pub fn pooled<'t>(&mut self, params: &Bound<'t>, set: Var<'t>) -> Result<Var<'t>> {
        let shape = set.shape();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(Error::Empty("encoder input set"));
        }
        if shape[1] != self.config.feature_dim {
            return Err(Error::shape("encode_covariance", &shape, &[shape[0], self.config.feature_dim]));
        }
        let mut h = self.embed.forward(params, set, false)?;
        for block in &mut self.blocks {
            h = block.attend(params, h, h)?;
        }
        self.pool.attend(params, params.var(self.seed), h)
    }

    pub fn encode<'t>(&mut self, params: &Bound<'t>, set: Var<'t>) -> Result<EncodedCovariance<'t>> {
        let d = self.config.feature_dim;
        let pooled = self.pooled(params, set)?;
        let diag_logits = self.diag_head.forward(params, pooled, false)?.reshape(&[d])?;
        let factors = match &mut self.factor_head {
            Some(head) => head
                .forward(params, pooled, false)?
                .scale(self.config.factor_gain)
                .reshape(&[d, self.config.rank])?,
            None => set.tape().constant(Tensor::zeros(&[d, 0])),
        };
        Ok(EncodedCovariance { diag_logits, factors })
    }
}
