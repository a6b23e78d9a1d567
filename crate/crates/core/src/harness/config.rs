//! Run configuration files.
//!
//! A run is described by one TOML file with `[run]`, `[data]`, `[model]`,
//! `[train]` and `[eval]` sections. Unknown keys are rejected so typos
//! surface as errors carrying the offending line and field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::default_beam;
use super::models::{ModelConfig, ModelKind};
use crate::error::{Error, Result};
use crate::modules::BeamConfig;
use crate::optim::{AdamConfig, Schedule, ScheduleKind};
use crate::tasks::TaskKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub name: String,
    pub task: TaskKind,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train_examples: usize,
    pub valid_examples: usize,
    pub test_examples: usize,
    /// Leading fraction of the training set actually used.
    #[serde(default = "one")]
    pub fraction: f64,
    #[serde(default = "one_u64")]
    pub split_seed: u64,
}

fn one() -> f64 {
    1.0
}

fn one_u64() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub steps: u64,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default = "default_smoothing")]
    pub label_smoothing: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Validation interval in steps; 0 keeps the last parameters.
    #[serde(default)]
    pub valid_every: u64,
}

fn default_clip() -> f64 {
    5.0
}

fn default_smoothing() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub eval: BeamConfig,
}

impl RunConfig {
    /// Defaults used throughout the examples and acceptance runs.
    pub fn default_for(task: TaskKind, kind: ModelKind, seed: u64) -> Self {
        let speech = task.is_speech();
        let mut model = ModelConfig::new(kind);
        model.olc_layers = if speech { 2 } else { 1 };
        RunConfig {
            run: RunSection {
                name: format!("{task}_{}_s{seed}", kind.as_str()),
                task,
                seed,
            },
            data: DataSection {
                train_examples: 5000,
                valid_examples: 200,
                test_examples: 1000,
                fraction: 1.0,
                split_seed: 1,
            },
            model,
            train: TrainSection {
                steps: if speech { 3000 } else { 4000 },
                batch_size: 16,
                peak_lr: 3e-3,
                warmup_steps: 100,
                clip_norm: default_clip(),
                label_smoothing: default_smoothing(),
                weight_decay: 0.0,
                valid_every: 500,
            },
            eval: default_beam(task),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.eval.validate()?;
        let d = &self.data;
        if d.train_examples == 0 || d.test_examples == 0 {
            return Err(Error::Config("data.train_examples and data.test_examples must be positive".into()));
        }
        if !(d.fraction > 0.0 && d.fraction <= 1.0) {
            return Err(Error::Config(format!("data.fraction must be in (0, 1], got {}", d.fraction)));
        }
        if self.train.valid_every > 0 && d.valid_examples == 0 {
            return Err(Error::Config("train.valid_every needs data.valid_examples > 0".into()));
        }
        if !(0.0..1.0).contains(&self.train.label_smoothing) {
            return Err(Error::Config("train.label_smoothing must be in [0, 1)".into()));
        }
        self.schedule().validate()
    }

    pub fn schedule(&self) -> Schedule {
        let t = &self.train;
        Schedule {
            kind: ScheduleKind::InverseSqrtWarmup,
            warmup_steps: t.warmup_steps,
            peak_lr: t.peak_lr,
            start_lr: 1e-5_f64.min(t.peak_lr),
            end_lr: 1e-5_f64.min(t.peak_lr),
            total_steps: t.steps,
            hold_steps: 0,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            weight_decay: self.train.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default_for(TaskKind::AsrMain, ModelKind::LegoWemb, 3);
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_field_names_line() {
        let cfg = RunConfig::default_for(TaskKind::MtA, ModelKind::Baseline, 1);
        let text = cfg.to_toml().unwrap().replace("batch_size", "batch_sise");
        let msg = RunConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(msg.contains("batch_sise"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn bad_fraction_is_config_error() {
        let mut cfg = RunConfig::default_for(TaskKind::MtA, ModelKind::Baseline, 1);
        cfg.data.fraction = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
