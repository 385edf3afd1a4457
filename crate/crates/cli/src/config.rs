use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use dta_core::model::{DescriptorMask, ModelConfig};
use dta_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::FusionChoice;

/// Contents of the TOML run file. Every section and key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub folds: usize,
    /// Descriptors zeroed after normalisation, e.g. `"rmsf+gyr"`.
    pub mask: String,
    /// Affinity histogram bin width for `prepare` and `summarize`.
    pub bin_width: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            folds: 5,
            mask: String::new(),
            bin_width: 1.0,
        }
    }
}

impl RunConfig {
    pub fn mask(&self) -> Result<DescriptorMask> {
        DescriptorMask::parse(&self.mask).map_err(|e| ConfigError(format!("mask: {e}")).into())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError(e.to_string()))?;
        if self.folds < 2 {
            return Err(ConfigError("folds: need at least two folds".into()).into());
        }
        if !(self.bin_width > 0.0) {
            return Err(ConfigError("bin_width: must be positive".into()).into());
        }
        self.mask()?;
        Ok(())
    }
}

/// Invalid configuration, from the file or from flags.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Flags shared by every command that trains. Set flags override the file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// concat, sum, average, hadamard or tfn; `all` for the ablate table.
    #[arg(long)]
    pub fusion: Option<FusionChoice>,
    /// Descriptors to zero, e.g. `rmsf+gyr`.
    #[arg(long)]
    pub mask: Option<String>,
}

pub struct Loaded {
    pub config: RunConfig,
    pub path: Option<PathBuf>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<Loaded> {
        let mut config = match &self.config {
            Some(path) => read_config(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            config.train.seed = v;
        }
        if let Some(v) = self.epochs {
            config.train.epochs = v;
        }
        if let Some(v) = self.batch_size {
            config.train.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            config.train.learning_rate = v;
        }
        if let Some(v) = self.folds {
            config.folds = v;
        }
        match self.fusion {
            Some(FusionChoice::One(v)) => config.model.fusion = v,
            Some(FusionChoice::All) => {
                return Err(ConfigError("fusion: \"all\" is only valid for ablate".into()).into())
            }
            None => {}
        }
        if let Some(v) = &self.mask {
            config.mask.clone_from(v);
        }
        config.validate()?;
        Ok(Loaded {
            config,
            path: self.config.clone(),
        })
    }
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.message())).into())
}
