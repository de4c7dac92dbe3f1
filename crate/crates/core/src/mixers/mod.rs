//! Value-decomposition heads combining per-agent utilities into Q_tot.
//!
//! Every mixer sees the full per-agent utility tables (`q[i][k]`), the joint
//! action and the global state, and returns Q_tot plus an auxiliary loss term
//! (non-zero only for QTRAN's consistency penalty).

pub mod qatten;
pub mod qmix;
pub mod qplex;
pub mod qtran;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::argmax;

pub use qatten::Qatten;
pub use qmix::Qmix;
pub use qplex::{qplex_mix, Qplex};
pub use qtran::{qtran_mix, Qtran};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixerKind {
    Vdn,
    Qmix,
    CwQmix,
    OwQmix,
    Qplex,
    Qtran,
    Qatten,
}

impl MixerKind {
    pub const ALL: [MixerKind; 7] = [
        MixerKind::Vdn,
        MixerKind::Qmix,
        MixerKind::CwQmix,
        MixerKind::OwQmix,
        MixerKind::Qplex,
        MixerKind::Qtran,
        MixerKind::Qatten,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MixerKind::Vdn => "vdn",
            MixerKind::Qmix => "qmix",
            MixerKind::CwQmix => "cw_qmix",
            MixerKind::OwQmix => "ow_qmix",
            MixerKind::Qplex => "qplex",
            MixerKind::Qtran => "qtran",
            MixerKind::Qatten => "qatten",
        }
    }

    /// Greedy joint action is the composition of per-agent argmaxes.
    pub fn decentralizable(self) -> bool {
        matches!(self, MixerKind::Vdn | MixerKind::Qmix | MixerKind::Qplex | MixerKind::Qatten)
    }

    pub fn is_weighted(self) -> bool {
        matches!(self, MixerKind::CwQmix | MixerKind::OwQmix)
    }
}

impl fmt::Display for MixerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MixerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        MixerKind::ALL.into_iter().find(|k| k.name() == norm).ok_or_else(|| {
            let valid: Vec<&str> = MixerKind::ALL.iter().map(|k| k.name()).collect();
            Error::config(format!("unknown mixer '{s}'; valid kinds: {}", valid.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixerConfig {
    /// QMIX mixing-layer width.
    pub embed_dim: usize,
    /// Hidden width of every hypernetwork / head network.
    pub hyper_hidden: usize,
    pub heads: usize,
    pub key_dim: usize,
    /// Down-weighting factor of the weighted QMIX variants.
    pub alpha: f64,
    pub qtran_penalty: f64,
}

impl Default for MixerConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hyper_hidden: 32,
            heads: 4,
            key_dim: 16,
            alpha: 0.5,
            qtran_penalty: 1.0,
        }
    }
}

impl MixerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if self.embed_dim == 0 || self.hyper_hidden == 0 || self.heads == 0 || self.key_dim == 0 {
            return Err(Error::config("mixer widths must be positive"));
        }
        if !(self.qtran_penalty >= 0.0) {
            return Err(Error::config("qtran_penalty must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Head {
    Vdn,
    Qmix(Qmix),
    Qplex(Qplex),
    Qtran(Qtran),
    Qatten(Qatten),
}

#[derive(Debug, Clone)]
pub enum MixCache {
    Vdn(Vec<usize>),
    Qmix(Box<qmix::QmixCache>, Vec<usize>),
    Qplex(Box<qplex::QplexCache>),
    Qtran(Box<qtran::QtranCache>),
    Qatten(Box<qatten::QattenCache>),
}

#[derive(Debug, Clone)]
pub struct MixOutput {
    pub q_tot: f64,
    pub aux: f64,
    pub cache: MixCache,
}

/// A mixer architecture; its parameters live in a caller-owned slice.
#[derive(Debug, Clone)]
pub struct Mixer {
    pub kind: MixerKind,
    pub config: MixerConfig,
    pub n_agents: usize,
    pub n_actions: usize,
    pub state_dim: usize,
    head: Head,
}

pub fn vdn_mix(q: &[f64]) -> f64 {
    q.iter().sum()
}

impl Mixer {
    pub fn new(kind: MixerKind, config: MixerConfig, n_agents: usize, n_actions: usize, state_dim: usize) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let head = match kind {
            MixerKind::Vdn => Head::Vdn,
            MixerKind::Qmix | MixerKind::CwQmix | MixerKind::OwQmix => {
                Head::Qmix(Qmix::new(n_agents, state_dim, c.embed_dim, c.hyper_hidden)?)
            }
            MixerKind::Qplex => Head::Qplex(Qplex::new(n_agents, n_actions, state_dim, c.hyper_hidden)?),
            MixerKind::Qtran => Head::Qtran(Qtran::new(n_agents, state_dim, c.hyper_hidden, c.qtran_penalty)?),
            MixerKind::Qatten => Head::Qatten(Qatten::new(n_agents, state_dim, c.hyper_hidden, c.heads, c.key_dim)?),
        };
        Ok(Self {
            kind,
            config,
            n_agents,
            n_actions,
            state_dim,
            head,
        })
    }

    pub fn n_params(&self) -> usize {
        match &self.head {
            Head::Vdn => 0,
            Head::Qmix(m) => m.n_params(),
            Head::Qplex(m) => m.n_params(),
            Head::Qtran(m) => m.n_params(),
            Head::Qatten(m) => m.n_params(),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        match &self.head {
            Head::Vdn => {}
            Head::Qmix(m) => m.init(p, rng),
            Head::Qplex(m) => m.init(p, rng),
            Head::Qtran(m) => m.init(p, rng),
            Head::Qatten(m) => m.init(p, rng),
        }
    }

    pub fn qmix(&self) -> Option<&Qmix> {
        match &self.head {
            Head::Qmix(m) => Some(m),
            _ => None,
        }
    }

    pub fn qplex(&self) -> Option<&Qplex> {
        match &self.head {
            Head::Qplex(m) => Some(m),
            _ => None,
        }
    }

    pub fn qtran(&self) -> Option<&Qtran> {
        match &self.head {
            Head::Qtran(m) => Some(m),
            _ => None,
        }
    }

    pub fn qatten(&self) -> Option<&Qatten> {
        match &self.head {
            Head::Qatten(m) => Some(m),
            _ => None,
        }
    }

    fn chosen(q: &[Vec<f64>], actions: &[usize]) -> Vec<f64> {
        q.iter().zip(actions).map(|(qi, &a)| qi[a]).collect()
    }

    pub fn forward(&self, p: &[f64], q: &[Vec<f64>], actions: &[usize], state: &[f64]) -> MixOutput {
        match &self.head {
            Head::Vdn => MixOutput {
                q_tot: vdn_mix(&Self::chosen(q, actions)),
                aux: 0.0,
                cache: MixCache::Vdn(actions.to_vec()),
            },
            Head::Qmix(m) => {
                let (q_tot, c) = m.forward(p, &Self::chosen(q, actions), state);
                MixOutput {
                    q_tot,
                    aux: 0.0,
                    cache: MixCache::Qmix(Box::new(c), actions.to_vec()),
                }
            }
            Head::Qplex(m) => {
                let (q_tot, c) = m.forward(p, q, actions, state);
                MixOutput {
                    q_tot,
                    aux: 0.0,
                    cache: MixCache::Qplex(Box::new(c)),
                }
            }
            Head::Qtran(m) => {
                let (q_tot, aux, c) = m.forward(p, q, actions, state);
                MixOutput {
                    q_tot,
                    aux,
                    cache: MixCache::Qtran(Box::new(c)),
                }
            }
            Head::Qatten(m) => {
                let (q_tot, c) = m.forward(p, q, actions, state);
                MixOutput {
                    q_tot,
                    aux: 0.0,
                    cache: MixCache::Qatten(Box::new(c)),
                }
            }
        }
    }

    /// Backpropagate upstream gradients `d` (on Q_tot) and `d_aux` (on the
    /// auxiliary term). Parameter gradients accumulate into `grad`, utility
    /// gradients into `grad_q[i][k]`.
    pub fn backward(&self, p: &[f64], cache: &MixCache, d: f64, d_aux: f64, grad: &mut [f64], grad_q: &mut [Vec<f64>]) {
        match (&self.head, cache) {
            (Head::Vdn, MixCache::Vdn(actions)) => {
                for (g, &a) in grad_q.iter_mut().zip(actions) {
                    g[a] += d;
                }
            }
            (Head::Qmix(m), MixCache::Qmix(c, actions)) => {
                let gq = m.backward(p, c, d, grad);
                for ((g, &a), v) in grad_q.iter_mut().zip(actions).zip(gq) {
                    g[a] += v;
                }
            }
            (Head::Qplex(m), MixCache::Qplex(c)) => m.backward(p, c, d, grad, grad_q),
            (Head::Qtran(m), MixCache::Qtran(c)) => m.backward(p, c, d, d_aux, grad, grad_q),
            (Head::Qatten(m), MixCache::Qatten(c)) => m.backward(p, c, d, grad, grad_q),
            _ => unreachable!("cache does not belong to this mixer"),
        }
    }

    /// Q_tot without building a cache.
    pub fn value(&self, p: &[f64], q: &[Vec<f64>], actions: &[usize], state: &[f64]) -> f64 {
        match &self.head {
            Head::Vdn => vdn_mix(&Self::chosen(q, actions)),
            Head::Qmix(m) => m.mix(&m.weights(p, state), &Self::chosen(q, actions)),
            _ => self.forward(p, q, actions, state).q_tot,
        }
    }

    /// Q_tot of every joint action in lexicographic order (agent 0 slowest).
    pub fn joint_values(&self, p: &[f64], q: &[Vec<f64>], state: &[f64]) -> Vec<f64> {
        let total = self.n_actions.pow(self.n_agents as u32);
        let mut out = Vec::with_capacity(total);
        match &self.head {
            Head::Qmix(m) => {
                let w = m.weights(p, state);
                for j in 0..total {
                    let a = decode_joint(j, self.n_agents, self.n_actions);
                    out.push(m.mix(&w, &Self::chosen(q, &a)));
                }
            }
            Head::Qtran(m) => {
                let (v, vi) = m.heads(p, state);
                for j in 0..total {
                    let a = decode_joint(j, self.n_agents, self.n_actions);
                    out.push(qtran_mix(&Self::chosen(q, &a), v, &vi));
                }
            }
            Head::Qatten(m) => {
                let w = m.weights(p, state);
                for j in 0..total {
                    let a = decode_joint(j, self.n_agents, self.n_actions);
                    out.push(m.mix_with(&w, &Self::chosen(q, &a)));
                }
            }
            _ => {
                for j in 0..total {
                    let a = decode_joint(j, self.n_agents, self.n_actions);
                    out.push(self.value(p, q, &a, state));
                }
            }
        }
        out
    }

    /// Exhaustive argmax over the joint grid; ties go to the lexicographically first.
    pub fn exhaustive_argmax(&self, p: &[f64], q: &[Vec<f64>], state: &[f64]) -> (Vec<usize>, f64) {
        let vals = self.joint_values(p, q, state);
        let j = argmax(&vals);
        (decode_joint(j, self.n_agents, self.n_actions), vals[j])
    }

    /// Greedy joint action and its Q_tot: per-agent argmaxes for the
    /// monotone family, exhaustive search for QTRAN and the weighted variants.
    pub fn greedy(&self, p: &[f64], q: &[Vec<f64>], state: &[f64]) -> (Vec<usize>, f64) {
        if self.kind.decentralizable() {
            let a: Vec<usize> = q.iter().map(|qi| argmax(qi)).collect();
            let v = self.value(p, q, &a, state);
            (a, v)
        } else {
            self.exhaustive_argmax(p, q, state)
        }
    }
}

pub fn decode_joint(mut j: usize, n_agents: usize, n_actions: usize) -> Vec<usize> {
    let mut a = vec![0; n_agents];
    for i in (0..n_agents).rev() {
        a[i] = j % n_actions;
        j /= n_actions;
    }
    a
}

/// Per-sample loss weight of the weighted QMIX variants.
///
/// CW: 1 when the target beats the best joint value or the sample's action is
/// the greedy one, `alpha` otherwise. OW: 1 when Q_tot underestimates the
/// target, `alpha` otherwise.
#[allow(clippy::too_many_arguments)]
pub fn wqmix_weight(
    kind: MixerKind,
    q_tot: f64,
    y: f64,
    u: &[usize],
    u_star: &[usize],
    q_star: f64,
    alpha: f64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::config(format!("alpha {alpha} outside (0, 1]")));
    }
    Ok(match kind {
        MixerKind::CwQmix => {
            if y > q_star || u == u_star {
                1.0
            } else {
                alpha
            }
        }
        MixerKind::OwQmix => {
            if q_tot < y {
                1.0
            } else {
                alpha
            }
        }
        _ => 1.0,
    })
}
