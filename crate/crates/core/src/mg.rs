//! The cooperative Markov-game contract: agents, joint actions, the dose grid
//! and the environment interface that both the learned simulator and test
//! fixtures implement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Propofol is agent 0, remifentanil agent 1.
pub const N_DRUGS: usize = 2;

/// Drug stock concentration for both syringes (mg/mL).
pub const DRUG_MG_PER_ML: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgSpec {
    pub n_agents: usize,
    pub state_dim: usize,
    pub action_levels: usize,
    pub gamma: f64,
}

impl MgSpec {
    pub fn new(n_agents: usize, state_dim: usize, action_levels: usize, gamma: f64) -> Result<Self> {
        let spec = Self {
            n_agents,
            state_dim,
            action_levels,
            gamma,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(Error::config("a Markov game needs at least two agents"));
        }
        if self.action_levels < 2 {
            return Err(Error::config("need at least two action levels per agent"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        Ok(())
    }

    pub fn joint_action_count(&self) -> usize {
        self.action_levels.pow(self.n_agents as u32)
    }
}

/// Per-agent dose indices, one per drug.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JointAction(pub Vec<usize>);

impl JointAction {
    pub fn pair(ppf: usize, rftn: usize) -> Self {
        JointAction(vec![ppf, rftn])
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn ppf_dose_index(&self) -> usize {
        self.0[0]
    }

    pub fn rftn_dose_index(&self) -> usize {
        self.0[1]
    }
}

/// Linear dose discretization: index k of K maps to `k / (K-1) * max_ml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionGrid {
    pub levels: usize,
    /// Largest per-step volume per drug (mL per 30 s).
    pub max_ml: Vec<f64>,
}

impl Default for ActionGrid {
    fn default() -> Self {
        Self {
            levels: 11,
            max_ml: vec![5.0, 1.0],
        }
    }
}

impl ActionGrid {
    pub fn new(levels: usize, max_ml: Vec<f64>) -> Result<Self> {
        if levels < 2 {
            return Err(Error::config("action grid needs at least two levels"));
        }
        if max_ml.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::config("max per-step volumes must be positive"));
        }
        Ok(Self { levels, max_ml })
    }

    pub fn n_agents(&self) -> usize {
        self.max_ml.len()
    }

    pub fn volume(&self, agent: usize, index: usize) -> Result<f64> {
        if index >= self.levels {
            return Err(Error::domain(format!(
                "dose index {index} out of range for {} levels",
                self.levels
            )));
        }
        let max = self
            .max_ml
            .get(agent)
            .ok_or_else(|| Error::domain(format!("no agent {agent}")))?;
        Ok(index as f64 / (self.levels - 1) as f64 * max)
    }

    /// Per-drug volumes (mL) for a joint action.
    pub fn decode(&self, action: &JointAction) -> Result<Vec<f64>> {
        if action.0.len() != self.n_agents() {
            return Err(Error::domain("joint action arity does not match the grid"));
        }
        action
            .0
            .iter()
            .enumerate()
            .map(|(i, &k)| self.volume(i, k))
            .collect()
    }

    /// Nearest grid index for a per-step volume; exact midpoints go to the lower index.
    pub fn quantize(&self, agent: usize, volume_ml: f64) -> usize {
        let max = self.max_ml[agent];
        let pos = (volume_ml / max * (self.levels - 1) as f64).clamp(0.0, (self.levels - 1) as f64);
        let lower = pos.floor();
        let idx = if pos - lower > 0.5 { lower + 1.0 } else { lower };
        idx as usize
    }
}

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Anything the online learner can interact with.
pub trait Environment {
    /// Number of distinct episodes (cases / initial states) available.
    fn episode_count(&self) -> usize;

    /// Human-readable identifier of an episode, used in training logs.
    fn episode_label(&self, episode: usize) -> String {
        episode.to_string()
    }

    /// Maximum number of transitions in the given episode.
    fn horizon(&self, episode: usize) -> usize;

    /// Start the given episode and return the first observation.
    fn reset(&mut self, episode: usize) -> Result<Vec<f64>>;

    fn step(&mut self, action: &JointAction) -> Result<StepOutcome>;
}
