//! Monotone two-layer mixing with state-conditioned non-negative weights.

use rand::Rng;

use crate::nn::{elu, elu_grad, MlpCache, MlpShape};

#[derive(Debug, Clone)]
pub struct Qmix {
    pub n_agents: usize,
    pub embed: usize,
    pub hyper_w1: MlpShape,
    pub hyper_b1: MlpShape,
    pub hyper_w2: MlpShape,
    pub hyper_v: MlpShape,
}

/// Hypernetwork outputs for one state.
#[derive(Debug, Clone)]
pub struct QmixWeights {
    /// Raw (signed) first-layer weights, agent-major: `[i * embed + e]`.
    pub w1_raw: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2_raw: Vec<f64>,
    pub v: f64,
}

#[derive(Debug, Clone)]
pub struct QmixCache {
    c_w1: MlpCache,
    c_b1: MlpCache,
    c_w2: MlpCache,
    c_v: MlpCache,
    weights: QmixWeights,
    q: Vec<f64>,
    z: Vec<f64>,
}

impl Qmix {
    pub fn new(n_agents: usize, state_dim: usize, embed: usize, hidden: usize) -> crate::Result<Self> {
        Ok(Self {
            n_agents,
            embed,
            hyper_w1: MlpShape::with_hidden(state_dim, &[hidden], n_agents * embed)?,
            hyper_b1: MlpShape::new(vec![state_dim, embed])?,
            hyper_w2: MlpShape::with_hidden(state_dim, &[hidden], embed)?,
            hyper_v: MlpShape::with_hidden(state_dim, &[hidden], 1)?,
        })
    }

    fn shapes(&self) -> [&MlpShape; 4] {
        [&self.hyper_w1, &self.hyper_b1, &self.hyper_w2, &self.hyper_v]
    }

    fn offsets(&self) -> [usize; 5] {
        let mut o = [0; 5];
        for (i, s) in self.shapes().iter().enumerate() {
            o[i + 1] = o[i] + s.n_params();
        }
        o
    }

    pub fn n_params(&self) -> usize {
        self.offsets()[4]
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        let o = self.offsets();
        for (i, s) in self.shapes().iter().enumerate() {
            s.init(&mut p[o[i]..o[i + 1]], rng);
        }
    }

    /// Parameter slice of hypernetwork `k` (0 = w1, 1 = b1, 2 = w2, 3 = v).
    pub fn part<'a>(&self, p: &'a mut [f64], k: usize) -> &'a mut [f64] {
        let o = self.offsets();
        &mut p[o[k]..o[k + 1]]
    }

    pub fn weights(&self, p: &[f64], state: &[f64]) -> QmixWeights {
        let o = self.offsets();
        QmixWeights {
            w1_raw: self.hyper_w1.forward(&p[o[0]..o[1]], state),
            b1: self.hyper_b1.forward(&p[o[1]..o[2]], state),
            w2_raw: self.hyper_w2.forward(&p[o[2]..o[3]], state),
            v: self.hyper_v.forward(&p[o[3]..o[4]], state)[0],
        }
    }

    fn hidden_input(&self, w: &QmixWeights, q: &[f64]) -> Vec<f64> {
        (0..self.embed)
            .map(|e| {
                let mut z = w.b1[e];
                for (i, qi) in q.iter().enumerate() {
                    z += qi * w.w1_raw[i * self.embed + e].abs();
                }
                z
            })
            .collect()
    }

    fn output(&self, w: &QmixWeights, z: &[f64]) -> f64 {
        let mut total = w.v;
        for (z, w2) in z.iter().zip(&w.w2_raw) {
            total += elu(*z) * w2.abs();
        }
        total
    }

    /// Q_tot for chosen utilities under precomputed weights.
    pub fn mix(&self, w: &QmixWeights, q: &[f64]) -> f64 {
        self.output(w, &self.hidden_input(w, q))
    }

    pub fn forward(&self, p: &[f64], q: &[f64], state: &[f64]) -> (f64, QmixCache) {
        let o = self.offsets();
        let c_w1 = self.hyper_w1.forward_cached(&p[o[0]..o[1]], state);
        let c_b1 = self.hyper_b1.forward_cached(&p[o[1]..o[2]], state);
        let c_w2 = self.hyper_w2.forward_cached(&p[o[2]..o[3]], state);
        let c_v = self.hyper_v.forward_cached(&p[o[3]..o[4]], state);
        let weights = QmixWeights {
            w1_raw: c_w1.output().to_vec(),
            b1: c_b1.output().to_vec(),
            w2_raw: c_w2.output().to_vec(),
            v: c_v.output()[0],
        };
        let z = self.hidden_input(&weights, q);
        let q_tot = self.output(&weights, &z);
        let cache = QmixCache {
            c_w1,
            c_b1,
            c_w2,
            c_v,
            weights,
            q: q.to_vec(),
            z,
        };
        (q_tot, cache)
    }

    /// Gradients for an upstream dLoss/dQ_tot of `d`; returns dQ_tot/dq scaled by `d`.
    pub fn backward(&self, p: &[f64], cache: &QmixCache, d: f64, grad: &mut [f64]) -> Vec<f64> {
        let o = self.offsets();
        let w = &cache.weights;
        let e_n = self.embed;
        let mut g_w1 = vec![0.0; self.n_agents * e_n];
        let mut g_b1 = vec![0.0; e_n];
        let mut g_w2 = vec![0.0; e_n];
        let mut g_q = vec![0.0; self.n_agents];
        for e in 0..e_n {
            let z = cache.z[e];
            g_w2[e] = d * elu(z) * sign(w.w2_raw[e]);
            let dz = d * w.w2_raw[e].abs() * elu_grad(z);
            g_b1[e] = dz;
            for i in 0..self.n_agents {
                let raw = w.w1_raw[i * e_n + e];
                g_w1[i * e_n + e] = dz * cache.q[i] * sign(raw);
                g_q[i] += dz * raw.abs();
            }
        }
        let (a, rest) = grad[o[0]..o[4]].split_at_mut(o[1] - o[0]);
        let (b, rest) = rest.split_at_mut(o[2] - o[1]);
        let (c, v) = rest.split_at_mut(o[3] - o[2]);
        self.hyper_w1.backward(&p[o[0]..o[1]], &cache.c_w1, &g_w1, a);
        self.hyper_b1.backward(&p[o[1]..o[2]], &cache.c_b1, &g_b1, b);
        self.hyper_w2.backward(&p[o[2]..o[3]], &cache.c_w2, &g_w2, c);
        self.hyper_v.backward(&p[o[3]..o[4]], &cache.c_v, &[d], v);
        g_q
    }
}

/// Derivative of |x|, taking +1 at zero.
fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}
