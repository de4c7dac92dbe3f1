//! Q_tot = sum Q_i + V(s) - sum V_i(s), with an optional consistency penalty.

use rand::Rng;

use crate::nn::{MlpCache, MlpShape};

#[derive(Debug, Clone)]
pub struct Qtran {
    pub n_agents: usize,
    pub v_net: MlpShape,
    /// One local value head per agent, all fed the full state.
    pub vi_net: MlpShape,
    pub penalty: f64,
}

#[derive(Debug, Clone)]
pub struct QtranCache {
    c_v: MlpCache,
    c_vi: MlpCache,
    actions: Vec<usize>,
    gap: f64,
}

/// The closed-form transformation.
pub fn qtran_mix(q_locals: &[f64], v_global: f64, v_locals: &[f64]) -> f64 {
    q_locals.iter().sum::<f64>() + v_global - v_locals.iter().sum::<f64>()
}

impl Qtran {
    pub fn new(n_agents: usize, state_dim: usize, hidden: usize, penalty: f64) -> crate::Result<Self> {
        Ok(Self {
            n_agents,
            v_net: MlpShape::with_hidden(state_dim, &[hidden], 1)?,
            vi_net: MlpShape::with_hidden(state_dim, &[hidden], n_agents)?,
            penalty,
        })
    }

    pub fn n_params(&self) -> usize {
        self.v_net.n_params() + self.vi_net.n_params()
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        let (a, b) = p.split_at_mut(self.v_net.n_params());
        self.v_net.init(a, rng);
        self.vi_net.init(b, rng);
    }

    /// `(V(s), [V_i(s)])`.
    pub fn heads(&self, p: &[f64], state: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = p.split_at(self.v_net.n_params());
        (self.v_net.forward(a, state)[0], self.vi_net.forward(b, state))
    }

    /// Returns `(Q_tot, penalty)`.
    pub fn forward(&self, p: &[f64], q: &[Vec<f64>], actions: &[usize], state: &[f64]) -> (f64, f64, QtranCache) {
        let (a, b) = p.split_at(self.v_net.n_params());
        let c_v = self.v_net.forward_cached(a, state);
        let c_vi = self.vi_net.forward_cached(b, state);
        let locals: Vec<f64> = q.iter().zip(actions).map(|(qi, &a)| qi[a]).collect();
        let v = c_v.output()[0];
        let q_tot = qtran_mix(&locals, v, c_vi.output());
        let gap = v - c_vi.output().iter().sum::<f64>();
        let aux = self.penalty * gap * gap;
        (
            q_tot,
            aux,
            QtranCache {
                c_v,
                c_vi,
                actions: actions.to_vec(),
                gap,
            },
        )
    }

    pub fn backward(&self, p: &[f64], cache: &QtranCache, d: f64, d_aux: f64, grad: &mut [f64], grad_q: &mut [Vec<f64>]) {
        for (g, &a) in grad_q.iter_mut().zip(&cache.actions) {
            g[a] += d;
        }
        let d_gap = d + d_aux * 2.0 * self.penalty * cache.gap;
        let n_v = self.v_net.n_params();
        let (pa, pb) = p.split_at(n_v);
        let (ga, gb) = grad.split_at_mut(n_v);
        self.v_net.backward(pa, &cache.c_v, &[d_gap], ga);
        self.vi_net.backward(pb, &cache.c_vi, &vec![-d_gap; self.n_agents], gb);
    }
}
