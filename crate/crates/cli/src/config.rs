//! Run configuration: a flat `key = value` text file with `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mmc_core::evaluation::EvalConfig;
use mmc_core::model::{HeadKind, ModelConfig};
use mmc_core::tasks::{DatasetKind, TaskConfig};
use mmc_core::tensor::AdamConfig;
use mmc_core::training::TrainConfig;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub head: String,
    pub rank: usize,
    pub feature_dim: usize,
    pub depth: usize,
    pub encoder_hidden: usize,
    pub encoder_heads: usize,
    pub encoder_blocks: usize,
    pub train_episodes: usize,
    pub validation_episodes: usize,
    pub eval_episodes: usize,
    pub lr: f64,
    pub seed: u64,
    pub mc_samples: usize,
    pub epsilon: f64,
    pub t_max: u32,
    pub spectral_bound: f64,
    pub box_expansion: f64,
    pub grid_resolution: usize,
    pub normalize: bool,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetKind::Moons,
            head: "proto-mahalanobis".into(),
            rank: 0,
            feature_dim: 16,
            depth: 3,
            encoder_hidden: 32,
            encoder_heads: 4,
            encoder_blocks: 2,
            train_episodes: 2000,
            validation_episodes: 20,
            eval_episodes: 200,
            lr: 1e-3,
            seed: 0,
            mc_samples: 100,
            epsilon: 1e-3,
            t_max: 1000,
            spectral_bound: 3.0,
            box_expansion: 3.0,
            grid_resolution: 150,
            normalize: true,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    /// Applies one `key = value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = value.parse().map_err(|e| CliError::Config(format!("{e}")))?,
            "head" => self.head = value.to_string(),
            "rank" => self.rank = parse(key, value)?,
            "feature_dim" => self.feature_dim = parse(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "encoder_hidden" => self.encoder_hidden = parse(key, value)?,
            "encoder_heads" => self.encoder_heads = parse(key, value)?,
            "encoder_blocks" => self.encoder_blocks = parse(key, value)?,
            "train_episodes" => self.train_episodes = parse(key, value)?,
            "validation_episodes" => self.validation_episodes = parse(key, value)?,
            "eval_episodes" => self.eval_episodes = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "mc_samples" => self.mc_samples = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "t_max" => self.t_max = parse(key, value)?,
            "spectral_bound" => self.spectral_bound = parse(key, value)?,
            "box_expansion" => self.box_expansion = parse(key, value)?,
            "grid_resolution" => self.grid_resolution = parse(key, value)?,
            "normalize" => self.normalize = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a config file body on top of `self`.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.merge_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_text(&text)
    }

    /// File representation; floats use the shortest exact decimal form, so
    /// [`RunConfig::from_text`] restores every value bit for bit.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("dataset", self.dataset.name().into());
        put("head", self.head.clone());
        put("rank", self.rank.to_string());
        put("feature_dim", self.feature_dim.to_string());
        put("depth", self.depth.to_string());
        put("encoder_hidden", self.encoder_hidden.to_string());
        put("encoder_heads", self.encoder_heads.to_string());
        put("encoder_blocks", self.encoder_blocks.to_string());
        put("train_episodes", self.train_episodes.to_string());
        put("validation_episodes", self.validation_episodes.to_string());
        put("eval_episodes", self.eval_episodes.to_string());
        put("lr", format!("{:?}", self.lr));
        put("seed", self.seed.to_string());
        put("mc_samples", self.mc_samples.to_string());
        put("epsilon", format!("{:?}", self.epsilon));
        put("t_max", self.t_max.to_string());
        put("spectral_bound", format!("{:?}", self.spectral_bound));
        put("box_expansion", format!("{:?}", self.box_expansion));
        put("grid_resolution", self.grid_resolution.to_string());
        put("normalize", self.normalize.to_string());
        put("out_dir", self.out_dir.display().to_string());
        s
    }

    pub fn head_kind(&self) -> Result<HeadKind> {
        HeadKind::parse(&self.head, self.rank).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CliError::Config(m));
        if self.feature_dim < 1 {
            return fail("feature_dim must be at least 1".into());
        }
        if !(self.spectral_bound > 0.0) {
            return fail(format!("spectral_bound {} must be positive", self.spectral_bound));
        }
        if self.mc_samples < 1 {
            return fail("mc_samples must be at least 1".into());
        }
        if !(self.lr > 0.0) {
            return fail(format!("lr {} must be positive", self.lr));
        }
        if self.t_max < 1 {
            return fail("t_max must be at least 1".into());
        }
        if !(self.box_expansion >= 1.0) {
            return fail(format!("box_expansion {} must be at least 1", self.box_expansion));
        }
        if self.grid_resolution < 2 {
            return fail("grid_resolution must be at least 2".into());
        }
        self.model_config()?
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.task_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut m = ModelConfig::new(self.head_kind()?);
        m.feature_dim = self.feature_dim;
        m.depth = self.depth;
        m.encoder_hidden = self.encoder_hidden;
        m.encoder_heads = self.encoder_heads;
        m.encoder_blocks = self.encoder_blocks;
        m.spectral_bound = self.spectral_bound;
        m.epsilon = self.epsilon;
        Ok(m)
    }

    pub fn task_config(&self) -> TaskConfig {
        let mut t = TaskConfig::new(self.dataset);
        t.normalize = self.normalize;
        t
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            episodes: self.train_episodes,
            adam: AdamConfig { lr: self.lr, ..AdamConfig::default() },
            seed: self.seed,
            validation_episodes: self.validation_episodes,
            mc_samples: self.mc_samples,
            t_max: self.t_max,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            episodes: self.eval_episodes,
            mc_samples: self.mc_samples,
            seed: self.seed,
            noise_per_episode: None,
            box_expansion: self.box_expansion,
        }
    }
}
