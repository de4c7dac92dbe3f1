//! Agent utility networks and the mixer over one flat parameter vector
//! `[agent 0 | agent 1 | ... | mixer]`, plus its target copy.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mg::JointAction;
use crate::mixers::{Mixer, MixerConfig, MixerKind};
use crate::nn::{MlpCache, MlpShape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: MixerKind,
    pub mixer: MixerConfig,
    pub hidden: Vec<usize>,
    pub n_agents: usize,
    pub n_actions: usize,
    pub state_dim: usize,
    /// Start every agent network at zero instead of the random init.
    pub zero_agents: bool,
}

impl ModelConfig {
    pub fn new(kind: MixerKind, n_agents: usize, n_actions: usize, state_dim: usize) -> Self {
        Self {
            kind,
            mixer: MixerConfig::default(),
            hidden: vec![64, 64],
            n_agents,
            n_actions,
            state_dim,
            zero_agents: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QModel {
    pub config: ModelConfig,
    pub agent: MlpShape,
    pub mixer: Mixer,
    pub params: Vec<f64>,
    pub target: Vec<f64>,
}

impl QModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let mut model = Self::shape(config)?;
        let n_agent = model.agent.n_params();
        for i in 0..model.config.n_agents {
            if !model.config.zero_agents {
                model.agent.init(&mut model.params[i * n_agent..(i + 1) * n_agent], rng);
            }
        }
        let r = model.mixer_range();
        model.mixer.init(&mut model.params[r], rng);
        model.target = model.params.clone();
        Ok(model)
    }

    /// Architecture with all parameters zero.
    pub fn shape(config: ModelConfig) -> Result<Self> {
        if config.n_agents < 1 || config.n_actions < 2 {
            return Err(Error::config("need at least one agent and two actions"));
        }
        let agent = MlpShape::with_hidden(config.state_dim, &config.hidden, config.n_actions)?;
        let mixer = Mixer::new(config.kind, config.mixer, config.n_agents, config.n_actions, config.state_dim)?;
        let n = agent.n_params() * config.n_agents + mixer.n_params();
        Ok(Self {
            config,
            agent,
            mixer,
            params: vec![0.0; n],
            target: vec![0.0; n],
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn agent_range(&self, i: usize) -> Range<usize> {
        let n = self.agent.n_params();
        i * n..(i + 1) * n
    }

    pub fn mixer_range(&self) -> Range<usize> {
        self.agent.n_params() * self.config.n_agents..self.params.len()
    }

    pub fn sync_target(&mut self) {
        self.target.copy_from_slice(&self.params);
    }

    /// Per-agent utility vectors under parameter vector `p`.
    pub fn utilities(&self, p: &[f64], obs: &[f64]) -> Vec<Vec<f64>> {
        (0..self.config.n_agents)
            .map(|i| self.agent.forward(&p[self.agent_range(i)], obs))
            .collect()
    }

    pub fn utilities_cached(&self, p: &[f64], obs: &[f64]) -> Vec<MlpCache> {
        (0..self.config.n_agents)
            .map(|i| self.agent.forward_cached(&p[self.agent_range(i)], obs))
            .collect()
    }

    /// Greedy joint action and its Q_tot.
    pub fn greedy_with(&self, p: &[f64], obs: &[f64]) -> (Vec<usize>, f64) {
        let q = self.utilities(p, obs);
        self.mixer.greedy(&p[self.mixer_range()], &q, obs)
    }

    pub fn greedy(&self, obs: &[f64]) -> JointAction {
        JointAction(self.greedy_with(&self.params, obs).0)
    }

    /// Q_tot of a given joint action under parameter vector `p`.
    pub fn q_tot(&self, p: &[f64], obs: &[f64], actions: &[usize]) -> f64 {
        let q = self.utilities(p, obs);
        self.mixer.value(&p[self.mixer_range()], &q, actions, obs)
    }
}
