//! Versioned, resumable training state.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, QModel};
use super::train::{TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::mg::ActionGrid;
use crate::mixers::MixerKind;
use crate::nn::Optimizer;
use crate::normalize::Normalizer;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Online,
    Offline,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::Online => "online",
            TrainMode::Offline => "offline",
        })
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "online" => Ok(TrainMode::Online),
            "offline" => Ok(TrainMode::Offline),
            _ => Err(Error::config(format!("unknown mode '{s}'; valid modes: online, offline"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: MixerKind,
    pub mode: TrainMode,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub grid: ActionGrid,
    pub normalizer: Normalizer,
    pub params: Vec<f64>,
    pub target: Vec<f64>,
    pub optimizer: Optimizer,
    pub rng: ChaCha8Rng,
    pub updates: u64,
    pub episodes_done: usize,
}

impl Checkpoint {
    pub fn capture(trainer: &Trainer, mode: TrainMode, train: &TrainConfig, grid: &ActionGrid, normalizer: &Normalizer) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            kind: trainer.model.config.kind,
            mode,
            model: trainer.model.config.clone(),
            train: train.clone(),
            grid: grid.clone(),
            normalizer: normalizer.clone(),
            params: trainer.model.params.clone(),
            target: trainer.model.target.clone(),
            optimizer: trainer.optimizer.clone(),
            rng: trainer.rng.clone(),
            updates: trainer.updates,
            episodes_done: trainer.episodes_done,
        }
    }

    pub fn model(&self) -> Result<QModel> {
        let mut m = QModel::shape(self.model.clone())?;
        if self.params.len() != m.n_params() || self.target.len() != m.n_params() {
            return Err(Error::data("checkpoint parameter count does not match its architecture"));
        }
        m.params.copy_from_slice(&self.params);
        m.target.copy_from_slice(&self.target);
        Ok(m)
    }

    /// Rebuild the trainer to continue where the run stopped. The replay
    /// buffer is not persisted.
    pub fn trainer(&self) -> Result<Trainer> {
        Ok(Trainer {
            model: self.model()?,
            optimizer: self.optimizer.clone(),
            rng: self.rng.clone(),
            updates: self.updates,
            episodes_done: self.episodes_done,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Checkpoint = crate::io::read_json(path)?;
        if c.format_version != CHECKPOINT_VERSION {
            return Err(Error::data(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                c.format_version
            )));
        }
        if c.kind != c.model.kind {
            return Err(Error::data("checkpoint kind tag disagrees with its model"));
        }
        Ok(c)
    }
}
