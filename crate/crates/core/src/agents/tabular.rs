//! A two-state, two-agent, three-action Markov game with additive per-agent
//! rewards, solvable exactly by value iteration on the joint MDP.

use crate::error::{Error, Result};
use crate::mg::{Environment, JointAction, StepOutcome};
use crate::nn::argmax;

pub const TAB_STATES: usize = 2;
pub const TAB_ACTIONS: usize = 3;

#[derive(Debug, Clone)]
pub struct TabularMg {
    /// `rewards[agent][state][action]`.
    pub rewards: [[[f64; TAB_ACTIONS]; TAB_STATES]; 2],
    /// Next state as a function of the state and agent 0's action.
    pub next: [[usize; TAB_ACTIONS]; TAB_STATES],
    pub horizon: usize,
    state: usize,
    steps: usize,
}

impl Default for TabularMg {
    fn default() -> Self {
        Self {
            rewards: [
                [[0.5, 0.2, 0.0], [1.0, 0.3, 0.1]],
                [[0.1, 0.4, 0.2], [0.0, 0.2, 0.6]],
            ],
            next: [[0, 0, 1], [1, 0, 1]],
            horizon: 50,
            state: 0,
            steps: 0,
        }
    }
}

impl TabularMg {
    pub fn observation(s: usize) -> Vec<f64> {
        let mut o = vec![0.0; TAB_STATES];
        o[s] = 1.0;
        o
    }

    pub fn reward(&self, s: usize, a: &[usize]) -> f64 {
        self.rewards[0][s][a[0]] + self.rewards[1][s][a[1]]
    }

    pub fn transition(&self, s: usize, a: &[usize]) -> usize {
        self.next[s][a[0]]
    }
}

impl Environment for TabularMg {
    fn episode_count(&self) -> usize {
        TAB_STATES
    }

    fn horizon(&self, _episode: usize) -> usize {
        self.horizon
    }

    fn reset(&mut self, episode: usize) -> Result<Vec<f64>> {
        if episode >= TAB_STATES {
            return Err(Error::domain(format!("no episode {episode}")));
        }
        self.state = episode;
        self.steps = 0;
        Ok(Self::observation(episode))
    }

    /// The task is continuing: reaching the horizon truncates without a
    /// terminal flag so that bootstrapped values match the discounted optimum.
    fn step(&mut self, action: &JointAction) -> Result<StepOutcome> {
        let a = action.indices();
        if a.len() != 2 || a.iter().any(|&k| k >= TAB_ACTIONS) {
            return Err(Error::domain("invalid joint action for the tabular game"));
        }
        let r = self.reward(self.state, a);
        self.state = self.transition(self.state, a);
        self.steps += 1;
        Ok(StepOutcome {
            observation: Self::observation(self.state),
            reward: r,
            done: false,
        })
    }
}

/// Optimal joint action values `q[s][a0 * K + a1]` of the discounted game.
pub fn value_iteration(mg: &TabularMg, gamma: f64, tol: f64) -> Vec<Vec<f64>> {
    let n_joint = TAB_ACTIONS * TAB_ACTIONS;
    let mut q = vec![vec![0.0; n_joint]; TAB_STATES];
    loop {
        let v: Vec<f64> = q.iter().map(|qs| qs[argmax(qs)]).collect();
        let mut delta: f64 = 0.0;
        for (s, qs) in q.iter_mut().enumerate() {
            for (j, qv) in qs.iter_mut().enumerate() {
                let a = [j / TAB_ACTIONS, j % TAB_ACTIONS];
                let new = mg.reward(s, &a) + gamma * v[mg.transition(s, &a)];
                delta = delta.max((new - *qv).abs());
                *qv = new;
            }
        }
        if delta < tol {
            return q;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_iteration_fixed_point() {
        let mg = TabularMg::default();
        let q = value_iteration(&mg, 0.9, 1e-13);
        // staying in state 1 with (0, 2) earns 1.6 per step forever
        assert!((q[1][2] - 16.0).abs() < 1e-9);
        for s in 0..2 {
            let v: Vec<f64> = q.iter().map(|qs| qs[argmax(qs)]).collect();
            for j in 0..9 {
                let a = [j / 3, j % 3];
                let bellman = mg.reward(s, &a) + 0.9 * v[mg.transition(s, &a)];
                assert!((q[s][j] - bellman).abs() < 1e-10);
            }
        }
    }
}
