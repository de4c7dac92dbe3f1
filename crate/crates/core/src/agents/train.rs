//! Online (against an environment) and offline (from a frozen buffer)
//! value-decomposition Q-learning.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::regularized_loss;
use super::model::QModel;
use super::replay::{ReplayBuffer, Transition};
use super::{select_actions, ExplorationSchedule};
use crate::error::{Error, Result};
use crate::mg::Environment;
use crate::nn::{clip_grad_norm, Optimizer, OptimizerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    /// Hard target copy every this many updates.
    pub target_sync: u64,
    pub episodes: usize,
    /// Gradient updates per environment step (online) or per logged
    /// transition of the episode's case (offline).
    pub updates_per_step: usize,
    pub buffer_capacity: usize,
    pub grad_clip: Option<f64>,
    pub exploration: ExplorationSchedule,
    pub divergence_threshold: f64,
    /// Weight of the penalty on utilities of unlogged actions; 0 is plain TD.
    pub conservative: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            lr: 1e-3,
            optimizer: OptimizerKind::Sgd,
            batch_size: 32,
            target_sync: 200,
            episodes: 200,
            updates_per_step: 1,
            buffer_capacity: 100_000,
            grad_clip: Some(10.0),
            exploration: ExplorationSchedule::default(),
            divergence_threshold: 1e6,
            conservative: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("learning rate must be finite and non-negative"));
        }
        if !(self.conservative >= 0.0 && self.conservative.is_finite()) {
            return Err(Error::config("conservative weight must be finite and non-negative"));
        }
        if self.batch_size == 0 || self.target_sync == 0 || self.buffer_capacity == 0 {
            return Err(Error::config("batch size, target sync and buffer capacity must be positive"));
        }
        let e = &self.exploration;
        if !(0.0 <= e.min && e.min <= e.initial && e.initial <= 1.0 && e.decay >= 0.0) {
            return Err(Error::config("exploration schedule must satisfy 0 <= min <= initial <= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub episode: usize,
    pub case_id: String,
    pub cr: f64,
    /// Mean loss over the episode's updates; empty when none ran.
    pub loss_mean: Option<f64>,
    pub epsilon_final: f64,
}

pub fn write_train_log<W: Write>(out: W, rows: &[TrainLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Everything a training run mutates; what a checkpoint persists.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: QModel,
    pub optimizer: Optimizer,
    pub rng: ChaCha8Rng,
    pub updates: u64,
    pub episodes_done: usize,
}

impl Trainer {
    pub fn new(model: QModel, cfg: &TrainConfig) -> Self {
        let n = model.n_params();
        Self {
            model,
            optimizer: Optimizer::new(cfg.optimizer, cfg.lr, n),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            updates: 0,
            episodes_done: 0,
        }
    }

    /// One gradient step on a sampled batch; returns the batch loss.
    pub fn update(&mut self, buffer: &ReplayBuffer, cfg: &TrainConfig) -> Result<f64> {
        let batch = buffer.sample(cfg.batch_size, &mut self.rng);
        let mut out = regularized_loss(&self.model, &self.model.params, &batch, cfg.gamma, cfg.conservative)?;
        if out.loss > cfg.divergence_threshold {
            return Err(Error::Divergence { loss: out.loss });
        }
        if let Some(c) = cfg.grad_clip {
            clip_grad_norm(&mut out.grad, c);
        }
        self.optimizer.step(&mut self.model.params, &out.grad);
        self.updates += 1;
        if self.updates % cfg.target_sync == 0 {
            self.model.sync_target();
        }
        Ok(out.loss)
    }
}

/// Which case the global episode index plays: each pass over the cases uses
/// its own seeded permutation, so resumed runs continue the same schedule.
fn episode_case(seed: u64, n_cases: usize, episode: usize) -> usize {
    let pass = (episode / n_cases) as u64;
    let mut order: Vec<usize> = (0..n_cases).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa076_1d64_78bd_642f ^ pass.wrapping_mul(0xe703_7ed1_a0b4_28db));
    order.shuffle(&mut rng);
    order[episode % n_cases]
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Epsilon-greedy rollouts, one case per episode, learning after every step.
pub fn train_online<E: Environment>(trainer: &mut Trainer, env: &mut E, cfg: &TrainConfig) -> Result<Vec<TrainLogRow>> {
    cfg.validate()?;
    let n_cases = env.episode_count();
    if n_cases == 0 {
        return Err(Error::config("environment offers no episodes"));
    }
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
    let mut log = Vec::with_capacity(cfg.episodes);
    for _ in 0..cfg.episodes {
        let episode = trainer.episodes_done;
        let case = episode_case(cfg.seed, n_cases, episode);
        let case_id = env.episode_label(case);
        let mut obs = env.reset(case)?;
        let mut cr = 0.0;
        let mut losses = Vec::new();
        let mut eps = cfg.exploration.at(0);
        for step in 0..env.horizon(case) {
            eps = cfg.exploration.at(step);
            let q = trainer.model.utilities(&trainer.model.params, &obs);
            let action = select_actions(&q, eps, &mut trainer.rng);
            let out = env.step(&action)?;
            cr += out.reward;
            buffer.push(Transition {
                case_id: case_id.clone(),
                state: obs,
                actions: action.0,
                reward: out.reward,
                next_state: out.observation.clone(),
                done: out.done,
            })?;
            if buffer.len() >= cfg.batch_size {
                for _ in 0..cfg.updates_per_step {
                    losses.push(trainer.update(&buffer, cfg)?);
                }
            }
            obs = out.observation;
            if out.done {
                break;
            }
        }
        log::debug!("episode {episode} case {case_id} cr {cr:.3}");
        log.push(TrainLogRow {
            episode,
            case_id,
            cr,
            loss_mean: mean(&losses),
            epsilon_final: eps,
        });
        trainer.episodes_done += 1;
    }
    Ok(log)
}

/// Batch TD learning on logged transitions, without environment access.
/// Each episode is credited to one logged case and performs as many updates
/// as that case has transitions (times `updates_per_step`).
pub fn train_offline(trainer: &mut Trainer, buffer: &ReplayBuffer, cfg: &TrainConfig) -> Result<Vec<TrainLogRow>> {
    cfg.validate()?;
    if buffer.is_empty() {
        return Err(Error::config("offline training needs a non-empty buffer"));
    }
    let mut cases: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for t in buffer.iter() {
        let e = cases.entry(t.case_id.as_str()).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += t.reward;
    }
    let cases: Vec<(&str, usize, f64)> = cases.into_iter().map(|(k, (n, r))| (k, n, r)).collect();
    let mut log = Vec::with_capacity(cfg.episodes);
    for _ in 0..cfg.episodes {
        let episode = trainer.episodes_done;
        let (case_id, n, cr) = cases[episode_case(cfg.seed, cases.len(), episode)];
        let mut losses = Vec::with_capacity(n * cfg.updates_per_step);
        for _ in 0..n * cfg.updates_per_step {
            losses.push(trainer.update(buffer, cfg)?);
        }
        log.push(TrainLogRow {
            episode,
            case_id: case_id.to_string(),
            cr,
            loss_mean: mean(&losses),
            epsilon_final: 0.0,
        });
        trainer.episodes_done += 1;
    }
    Ok(log)
}
