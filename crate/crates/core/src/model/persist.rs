use std::path::Path;

use super::{HeadKind, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{checkpoint, Tensor};

const CONFIG_KEY: &str = "model.config";
const HEAD_KEY: &str = "head.kind";
const TEMPERATURE_KEY: &str = "head.temperature";

fn config_tensor(c: &ModelConfig) -> Tensor {
    Tensor::vector(vec![
        c.input_dim as f64,
        c.feature_dim as f64,
        c.depth as f64,
        c.spectral_bound,
        c.encoder_hidden as f64,
        c.encoder_heads as f64,
        c.encoder_blocks as f64,
        c.factor_gain,
        c.diag_floor,
        c.epsilon,
    ])
}

fn count(v: f64, what: &str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
        Ok(v as usize)
    } else {
        Err(Error::Checkpoint(format!("{what} {v} is not a count")))
    }
}

fn config_from(head: HeadKind, t: &Tensor) -> Result<ModelConfig> {
    let v = t.data();
    if v.len() != 10 {
        return Err(Error::Checkpoint(format!("{CONFIG_KEY} has {} entries, expected 10", v.len())));
    }
    let config = ModelConfig {
        head,
        input_dim: count(v[0], "input_dim")?,
        feature_dim: count(v[1], "feature_dim")?,
        depth: count(v[2], "depth")?,
        spectral_bound: v[3],
        encoder_hidden: count(v[4], "encoder_hidden")?,
        encoder_heads: count(v[5], "encoder_heads")?,
        encoder_blocks: count(v[6], "encoder_blocks")?,
        factor_gain: v[7],
        diag_floor: v[8],
        epsilon: v[9],
    };
    config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(config)
}

impl Model {
    /// Everything needed to restore the model: config, head, temperatures,
    /// parameters and power-iteration buffers.
    pub fn to_entries(&self) -> Vec<(String, Tensor)> {
        let mut entries = vec![
            (CONFIG_KEY.to_string(), config_tensor(&self.config)),
            (HEAD_KEY.to_string(), Tensor::vector(self.config.head.code().to_vec())),
            (
                TEMPERATURE_KEY.to_string(),
                Tensor::vector(vec![f64::from(self.energy_temperature), self.logit_temperature]),
            ),
        ];
        entries.extend(self.params.iter().map(|(n, t)| (n.to_string(), t.clone())));
        entries.extend(self.buffers());
        entries
    }

    pub fn from_entries(entries: &[(String, Tensor)]) -> Result<Self> {
        let find = |key: &str| {
            entries
                .iter()
                .find(|(n, _)| n == key)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Checkpoint(format!("missing entry {key:?}")))
        };
        let head = HeadKind::from_code(find(HEAD_KEY)?.data())?;
        let config = config_from(head, find(CONFIG_KEY)?)?;
        let temps = find(TEMPERATURE_KEY)?.data();
        if temps.len() != 2 || !(temps[0] >= 1.0) || temps[0].fract() != 0.0 || !(temps[1] > 0.0) {
            return Err(Error::Checkpoint(format!("invalid temperatures {temps:?}")));
        }
        let mut model = Model::new(config, 0)?;
        model.energy_temperature = temps[0] as u32;
        model.logit_temperature = temps[1];

        let mut seen = 0;
        for (name, value) in entries {
            if [CONFIG_KEY, HEAD_KEY, TEMPERATURE_KEY].contains(&name.as_str()) {
                continue;
            }
            if model.params.id_of(name).is_some() {
                model.params.assign(name, value.clone()).map_err(|e| Error::Checkpoint(e.to_string()))?;
                seen += 1;
            } else if !model.extractor.layers_mut().any(|l| l.load_buffer(name, value)) {
                return Err(Error::Checkpoint(format!("unexpected entry {name:?}")));
            }
        }
        if seen != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {seen} of {} parameters",
                model.params.len()
            )));
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        checkpoint::encode(&self.to_entries())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_entries(&checkpoint::decode(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
