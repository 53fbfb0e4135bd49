//! Sweep configuration file (TOML, flat keys, unknown keys rejected).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mcbench_core::datasets::DatasetKind;
use mcbench_core::nn::{Architecture, TrainConfig};
use mcbench_core::quantization::Int8Mode;
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_arch")]
    pub arch: String,
    /// Defaults to the architecture's dataset.
    pub dataset: Option<String>,
    /// Relative paths resolve against the config file's directory.
    pub data_dir: Option<PathBuf>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_epochs")]
    pub finetune_epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f32,
    #[serde(default = "default_lr_decay_epoch")]
    pub lr_decay_epoch: usize,
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f32,
    #[serde(default = "default_val_split")]
    pub val_split: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_sparsities")]
    pub sparsities: Vec<f64>,
    #[serde(default = "default_precisions")]
    pub precisions: Vec<u32>,
    #[serde(default = "default_int8_mode")]
    pub int8_mode: String,
    /// Use only the first N training examples.
    pub train_limit: Option<usize>,
}

fn default_arch() -> String {
    Architecture::MnistCnn.id().to_string()
}
fn default_epochs() -> usize {
    TrainConfig::default().epochs
}
fn default_batch_size() -> usize {
    TrainConfig::default().batch_size
}
fn default_learning_rate() -> f32 {
    TrainConfig::default().learning_rate
}
fn default_lr_decay_epoch() -> usize {
    TrainConfig::default().lr_decay_epoch.unwrap_or(0)
}
fn default_lr_decay() -> f32 {
    TrainConfig::default().lr_decay
}
fn default_val_split() -> f64 {
    TrainConfig::default().val_split
}
fn default_seed() -> u64 {
    TrainConfig::default().seed
}
fn default_sparsities() -> Vec<f64> {
    vec![0.0, 0.5, 0.75, 0.9, 0.95, 0.99]
}
fn default_precisions() -> Vec<u32> {
    vec![32, 16, 8]
}
fn default_int8_mode() -> String {
    Int8Mode::Asymmetric.id().to_string()
}

impl SweepConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: SweepConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        if let Some(dir) = &cfg.data_dir {
            if dir.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.data_dir = Some(base.join(dir));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let arch = self.architecture()?;
        if self.dataset_kind()? != arch.dataset() {
            bail!("architecture {arch} expects dataset {}", arch.dataset());
        }
        self.int8()?;
        if self.sparsities.is_empty() || self.precisions.is_empty() {
            bail!("sparsity and precision grids must be non-empty");
        }
        if let Some(s) = self.sparsities.iter().find(|s| !(0.0..1.0).contains(*s)) {
            bail!("sparsity {s} outside [0, 1)");
        }
        if let Some(p) = self.precisions.iter().find(|p| !matches!(p, 8 | 16 | 32)) {
            bail!("precision {p} not in {{8, 16, 32}}");
        }
        if !self.sparsities.contains(&0.0) || !self.precisions.contains(&32) {
            bail!("grids must contain the baseline cell (sparsity 0, precision 32)");
        }
        for (i, s) in self.sparsities.iter().enumerate() {
            if self.sparsities[..i].contains(s) {
                bail!("duplicate sparsity {s}");
            }
        }
        for (i, p) in self.precisions.iter().enumerate() {
            if self.precisions[..i].contains(p) {
                bail!("duplicate precision {p}");
            }
        }
        self.train_config().validate()?;
        self.finetune_config().validate()?;
        Ok(())
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Ok(self.arch.parse()?)
    }

    pub fn dataset_kind(&self) -> Result<DatasetKind> {
        match &self.dataset {
            Some(d) => Ok(d.parse()?),
            None => Ok(self.architecture()?.dataset()),
        }
    }

    pub fn int8(&self) -> Result<Int8Mode> {
        Ok(self.int8_mode.parse()?)
    }

    pub fn data_dir(&self) -> Result<PathBuf> {
        Ok(match &self.data_dir {
            Some(d) => d.clone(),
            None => default_data_dir(self.dataset_kind()?),
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            lr_decay_epoch: (self.lr_decay_epoch > 0).then_some(self.lr_decay_epoch),
            lr_decay: self.lr_decay,
            val_split: self.val_split,
            seed: self.seed,
        }
    }

    pub fn finetune_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.finetune_epochs,
            ..self.train_config()
        }
    }
}

pub fn default_data_dir(kind: DatasetKind) -> PathBuf {
    PathBuf::from("data").join(kind.id())
}
