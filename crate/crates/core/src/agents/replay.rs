//! Transition storage with FIFO eviction.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::reward;
use crate::error::{Error, Result};
use crate::mg::ActionGrid;
use crate::normalize::Normalizer;
use crate::types::CaseRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub case_id: String,
    pub state: Vec<f64>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
    read_only: bool,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            items: VecDeque::new(),
            read_only: false,
        })
    }

    /// A frozen buffer holding exactly `items`.
    pub fn frozen(items: Vec<Transition>) -> Self {
        Self {
            capacity: items.len().max(1),
            items: items.into(),
            read_only: true,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_read_only(&self) -> bool {
        self.read_only
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if self.read_only {
            return Err(Error::config("replay buffer is read-only"));
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        Ok(())
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform sample with replacement.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, n: usize, rng: &mut R) -> Vec<&'a Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

/// Logged trajectories as transitions: actions are the per-step volume
/// deltas snapped to the grid, rewards come from the next BIS, and each
/// case's last transition is terminal.
pub fn offline_buffer(records: &[CaseRecord], norm: &Normalizer, grid: &ActionGrid) -> Result<ReplayBuffer> {
    let mut items = Vec::new();
    for rec in records {
        for (t, w) in rec.steps.windows(2).enumerate() {
            let (s, n) = (&w[0], &w[1]);
            let deltas = [n.ppf_vol - s.ppf_vol, n.rftn_vol - s.rftn_vol];
            let actions = (0..grid.n_agents()).map(|i| grid.quantize(i, deltas[i].max(0.0))).collect();
            items.push(Transition {
                case_id: rec.case_id.clone(),
                state: norm.normalize(s)?.to_vec(),
                actions,
                reward: reward(n.bis),
                next_state: norm.normalize(n)?.to_vec(),
                done: t + 2 == rec.len(),
            });
        }
    }
    if items.is_empty() {
        return Err(Error::config("no transitions in the offline dataset"));
    }
    Ok(ReplayBuffer::frozen(items))
}
