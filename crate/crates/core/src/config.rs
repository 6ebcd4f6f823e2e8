//! Experiment configuration: one TOML file fully specifies a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, PolicyParams};
use crate::error::{Error, Result};
use crate::reward::RewardConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub metrics_csv: PathBuf,
    pub params_json: PathBuf,
    pub compare_csv: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            metrics_csv: PathBuf::from("metrics.csv"),
            params_json: PathBuf::from("params.json"),
            compare_csv: PathBuf::from("compare.csv"),
        }
    }
}

impl OutputConfig {
    pub fn metrics_path(&self) -> PathBuf {
        self.dir.join(&self.metrics_csv)
    }

    pub fn params_path(&self) -> PathBuf {
        self.dir.join(&self.params_json)
    }

    pub fn compare_path(&self) -> PathBuf {
        self.dir.join(&self.compare_csv)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub init: PolicyParams,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// The toy-scale defaults.
    pub fn toy() -> Self {
        ExperimentConfig::default()
    }

    /// Batch shape and learning rate reported for the 8B-model runs. Kept
    /// for reference; at this rate the toy policy barely moves.
    pub fn paper() -> Self {
        let mut cfg = ExperimentConfig::default();
        cfg.train.queries_per_batch = 128;
        cfg.train.samples_per_query = 16;
        cfg.train.learning_rate = 1e-6;
        cfg.output.dir = PathBuf::from("out/paper");
        cfg
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "toy" => Some(Self::toy()),
            "paper" => Some(Self::paper()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.reward.validate()?;
        self.env.validate()?;
        if !self.init.is_finite() {
            return Err(Error::config("init", "parameters must be finite"));
        }
        Ok(())
    }

    /// Parses and validates. Syntax and type errors name the offending key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig {
            field: "toml".to_string(),
            message: e.message().to_string() + &span_note(text, e.span()),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

fn span_note(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}
