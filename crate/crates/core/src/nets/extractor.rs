use rand::Rng;

use super::SpectralLinear;
use crate::error::Result;
use crate::tensor::{Bound, ParamStore, Tensor, Var};

/// `x + relu(Ŵx + b)`.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub inner: SpectralLinear,
}

impl ResidualBlock {
    pub fn forward<'t>(&mut self, params: &Bound<'t>, x: Var<'t>, train: bool) -> Result<Var<'t>> {
        let h = self.inner.forward(params, x, train)?.relu();
        x.add(h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtractorConfig {
    pub input_dim: usize,
    pub feature_dim: usize,
    pub depth: usize,
    /// Spectral bound `c`; `None` disables spectral normalization.
    pub spectral_bound: Option<f64>,
}

/// Fully-connected feature extractor: input projection followed by residual blocks.
#[derive(Clone, Debug)]
pub struct Extractor {
    config: ExtractorConfig,
    input: SpectralLinear,
    blocks: Vec<ResidualBlock>,
}

impl Extractor {
    pub fn new(store: &mut ParamStore, prefix: &str, config: ExtractorConfig, rng: &mut impl Rng) -> Self {
        let input = SpectralLinear::new(
            store,
            &format!("{prefix}.input"),
            config.input_dim,
            config.feature_dim,
            config.spectral_bound,
            rng,
        );
        let blocks = (0..config.depth)
            .map(|i| ResidualBlock {
                inner: SpectralLinear::new(
                    store,
                    &format!("{prefix}.block{i}"),
                    config.feature_dim,
                    config.feature_dim,
                    config.spectral_bound,
                    rng,
                ),
            })
            .collect();
        Extractor { config, input, blocks }
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    /// Maps an `N × input_dim` batch to `N × feature_dim` features.
    pub fn forward<'t>(&mut self, params: &Bound<'t>, x: Var<'t>, train: bool) -> Result<Var<'t>> {
        let mut h = self.input.forward(params, x, train)?;
        for block in &mut self.blocks {
            h = block.forward(params, h, train)?;
        }
        Ok(h)
    }

    pub fn layers(&self) -> impl Iterator<Item = &SpectralLinear> {
        std::iter::once(&self.input).chain(self.blocks.iter().map(|b| &b.inner))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut SpectralLinear> {
        std::iter::once(&mut self.input).chain(self.blocks.iter_mut().map(|b| &mut b.inner))
    }

    /// Product of per-layer Lipschitz bounds of the effective weights
    /// (`1 + ‖Ŵ‖` for residual blocks).
    pub fn lipschitz_upper_bound(&self, store: &ParamStore) -> f64 {
        let mut bound = super::spectral_norm(&self.input.effective_weight(store));
        for block in &self.blocks {
            bound *= 1.0 + super::spectral_norm(&block.inner.effective_weight(store));
        }
        bound
    }

    pub fn buffers(&self) -> Vec<(String, Tensor)> {
        self.layers().flat_map(SpectralLinear::buffers).collect()
    }
}
