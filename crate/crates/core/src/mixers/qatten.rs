//! Multi-head attention over agents: Q_tot = mean over heads of sum_i w_hi(s) Q_i.

use rand::Rng;

use crate::nn::{MlpCache, MlpShape};

#[derive(Debug, Clone)]
pub struct Qatten {
    pub n_agents: usize,
    pub heads: usize,
    pub key_dim: usize,
    /// State -> one query per head.
    pub query_net: MlpShape,
}

#[derive(Debug, Clone)]
pub struct QattenCache {
    c_query: MlpCache,
    /// `[h * n_agents + i]`.
    weights: Vec<f64>,
    chosen: Vec<f64>,
    actions: Vec<usize>,
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

impl Qatten {
    pub fn new(n_agents: usize, state_dim: usize, hidden: usize, heads: usize, key_dim: usize) -> crate::Result<Self> {
        Ok(Self {
            n_agents,
            heads,
            key_dim,
            query_net: MlpShape::with_hidden(state_dim, &[hidden], heads * key_dim)?,
        })
    }

    fn n_keys(&self) -> usize {
        self.heads * self.n_agents * self.key_dim
    }

    pub fn n_params(&self) -> usize {
        self.query_net.n_params() + self.n_keys()
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        let (a, keys) = p.split_at_mut(self.query_net.n_params());
        self.query_net.init(a, rng);
        for k in keys {
            *k = rng.random_range(-1.0..1.0);
        }
    }

    /// Key parameters, laid out `[(h * n_agents + i) * key_dim + d]`.
    pub fn keys_mut<'a>(&self, p: &'a mut [f64]) -> &'a mut [f64] {
        &mut p[self.query_net.n_params()..]
    }

    fn attention(&self, keys: &[f64], query: &[f64]) -> Vec<f64> {
        let scale = 1.0 / (self.key_dim as f64).sqrt();
        let mut w = Vec::with_capacity(self.heads * self.n_agents);
        for h in 0..self.heads {
            let qh = &query[h * self.key_dim..(h + 1) * self.key_dim];
            let scores: Vec<f64> = (0..self.n_agents)
                .map(|i| {
                    let k = &keys[(h * self.n_agents + i) * self.key_dim..][..self.key_dim];
                    scale * k.iter().zip(qh).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            w.extend(softmax(&scores));
        }
        w
    }

    /// Attention weights per head, `[h * n_agents + i]`; each head sums to 1.
    pub fn weights(&self, p: &[f64], state: &[f64]) -> Vec<f64> {
        let (a, keys) = p.split_at(self.query_net.n_params());
        self.attention(keys, &self.query_net.forward(a, state))
    }

    pub fn mix_with(&self, weights: &[f64], chosen: &[f64]) -> f64 {
        let mut total = 0.0;
        for h in 0..self.heads {
            for i in 0..self.n_agents {
                total += weights[h * self.n_agents + i] * chosen[i];
            }
        }
        total / self.heads as f64
    }

    pub fn forward(&self, p: &[f64], q: &[Vec<f64>], actions: &[usize], state: &[f64]) -> (f64, QattenCache) {
        let (a, keys) = p.split_at(self.query_net.n_params());
        let c_query = self.query_net.forward_cached(a, state);
        let weights = self.attention(keys, c_query.output());
        let chosen: Vec<f64> = q.iter().zip(actions).map(|(qi, &a)| qi[a]).collect();
        let q_tot = self.mix_with(&weights, &chosen);
        (
            q_tot,
            QattenCache {
                c_query,
                weights,
                chosen,
                actions: actions.to_vec(),
            },
        )
    }

    pub fn backward(&self, p: &[f64], cache: &QattenCache, d: f64, grad: &mut [f64], grad_q: &mut [Vec<f64>]) {
        let n_q = self.query_net.n_params();
        let (pa, keys) = p.split_at(n_q);
        let (ga, gk) = grad.split_at_mut(n_q);
        let query = cache.c_query.output();
        let scale = 1.0 / (self.key_dim as f64).sqrt();
        let hn = self.heads as f64;
        let mut g_query = vec![0.0; self.heads * self.key_dim];
        for h in 0..self.heads {
            let w = &cache.weights[h * self.n_agents..(h + 1) * self.n_agents];
            let dw: Vec<f64> = cache.chosen.iter().map(|c| d * c / hn).collect();
            let dot: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
            for i in 0..self.n_agents {
                grad_q[i][cache.actions[i]] += d * w[i] / hn;
                let ds = w[i] * (dw[i] - dot);
                let kofs = (h * self.n_agents + i) * self.key_dim;
                for k in 0..self.key_dim {
                    g_query[h * self.key_dim + k] += ds * scale * keys[kofs + k];
                    gk[kofs + k] += ds * scale * query[h * self.key_dim + k];
                }
            }
        }
        self.query_net.backward(pa, &cache.c_query, &g_query, ga);
    }
}
