use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient held a NaN or infinity; parameters and moments untouched.
    SkippedNonFinite,
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(Error::invalid("adam", format!("learning rate must be positive, got {}", config.lr)));
        }
        let zeros = |p: &Tensor| Tensor::zeros(p.shape());
        Ok(Adam {
            config,
            step: 0,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<StepOutcome> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::invalid(
                "adam",
                format!("{} params, {} grads, {} moment buffers", params.len(), grads.len(), self.first.len()),
            ));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Ok(StepOutcome::SkippedNonFinite);
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.first.iter_mut().zip(self.second.iter_mut())) {
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(StepOutcome::Applied)
    }
}
