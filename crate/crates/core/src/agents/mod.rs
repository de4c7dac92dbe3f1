//! Per-agent utility networks, exploration, replay, TD targets and the
//! online/offline training loops.

pub mod checkpoint;
pub mod loss;
pub mod model;
pub mod replay;
pub mod tabular;
pub mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mg::JointAction;
use crate::nn::argmax;

pub use checkpoint::{Checkpoint, TrainMode, CHECKPOINT_VERSION};
pub use loss::{mse_loss, regularized_loss, LossOutput};
pub use model::{ModelConfig, QModel};
pub use replay::{offline_buffer, ReplayBuffer, Transition};
pub use tabular::{value_iteration, TabularMg};
pub use train::{train_offline, train_online, write_train_log, TrainConfig, TrainLogRow, Trainer};

/// Target BIS and the accepted fluctuation scale of the reward bell.
pub const BIS_TARGET: f64 = 50.0;
pub const BIS_SIGMA: f64 = 20.0;

/// Gaussian-shaped reward peaking at BIS 50.
pub fn reward(bis: f64) -> f64 {
    let d = bis - BIS_TARGET;
    (-(d * d) / (2.0 * BIS_SIGMA * BIS_SIGMA)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplorationSchedule {
    pub initial: f64,
    pub min: f64,
    pub decay: f64,
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        Self {
            initial: 0.8,
            min: 0.1,
            decay: 0.01,
        }
    }
}

impl ExplorationSchedule {
    pub fn at(&self, step: usize) -> f64 {
        self.min.max(self.initial - step as f64 * self.decay)
    }
}

/// Linear decay with a floor, indexed by the step within the current case.
pub fn epsilon(step: usize) -> f64 {
    ExplorationSchedule::default().at(step)
}

/// One-step Bellman target.
pub fn td_target(r: f64, q_next_max: f64, gamma: f64, done: bool) -> f64 {
    if done {
        r
    } else {
        r + gamma * q_next_max
    }
}

/// Independent per-agent epsilon-greedy; greedy ties go to the lowest index.
pub fn select_actions<R: Rng + ?Sized>(q: &[Vec<f64>], eps: f64, rng: &mut R) -> JointAction {
    JointAction(
        q.iter()
            .map(|qi| {
                if eps > 0.0 && rng.random::<f64>() < eps {
                    rng.random_range(0..qi.len())
                } else {
                    argmax(qi)
                }
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reward_examples() {
        assert_eq!(reward(50.0), 1.0);
        assert!((reward(30.0) - (-0.5f64).exp()).abs() < 1e-12);
        assert_eq!(reward(30.0), reward(70.0));
    }

    #[test]
    fn epsilon_examples() {
        assert_eq!(epsilon(0), 0.8);
        assert!((epsilon(70) - 0.1).abs() < 1e-12);
        assert_eq!(epsilon(1_000_000), 0.1);
        assert!((epsilon(10) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn td_examples() {
        assert!((td_target(1.0, 2.0, 0.9, false) - 2.8).abs() < 1e-12);
        assert_eq!(td_target(1.0, 2.0, 0.9, true), 1.0);
        assert_eq!(td_target(1.0, 2.0, 0.0, false), 1.0);
    }

    #[test]
    fn greedy_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = vec![vec![0.0, 3.0, 1.0], vec![2.0, 2.0, 2.0]];
        assert_eq!(select_actions(&q, 0.0, &mut rng), JointAction(vec![1, 0]));
    }

    #[test]
    fn uniform_exploration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = 11;
        let q = vec![vec![0.0; k], (0..k).map(|i| i as f64).collect()];
        let n = 10_000;
        let mut counts = vec![vec![0usize; k]; 2];
        for _ in 0..n {
            let a = select_actions(&q, 1.0, &mut rng);
            for i in 0..2 {
                counts[i][a.0[i]] += 1;
            }
        }
        let p = 1.0 / k as f64;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts.iter().flatten() {
            assert!((*c as f64 - mean).abs() <= 3.0 * sd, "{c} vs {mean}");
        }
    }
}
