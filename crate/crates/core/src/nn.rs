//! Small dense networks over flat parameter slices, with hand-written
//! backpropagation, plus SGD and Adam.
//!
//! A network is only a shape; its parameters live in a caller-owned slice so
//! that a whole multi-agent model is one contiguous vector (cheap target
//! copies, one optimizer, trivial finite-difference checks).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected layers with ReLU between them and a linear output.
/// Parameters per layer: weights (out x in, row-major) then biases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub sizes: Vec<usize>,
}

/// Layer activations from a forward pass, input first, output last.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    pub acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map_or(&[], |v| v.as_slice())
    }
}

impl MlpShape {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::config("an MLP needs an input and an output layer of non-zero width"));
        }
        Ok(Self { sizes })
    }

    /// `input -> hidden... -> output`.
    pub fn with_hidden(input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self::new(sizes)
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        let mut off = 0;
        for w in self.sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for v in &mut p[off..off + w[1] * w[0] + w[1]] {
                *v = rng.random_range(-bound..bound);
            }
            off += w[1] * w[0] + w[1];
        }
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut off = 0;
        let last = self.sizes.len() - 2;
        for (l, w) in self.sizes.windows(2).enumerate() {
            cur = layer(&p[off..], &cur, w[0], w[1], l < last);
            off += w[1] * w[0] + w[1];
        }
        cur
    }

    pub fn forward_cached(&self, p: &[f64], x: &[f64]) -> MlpCache {
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        let mut off = 0;
        let last = self.sizes.len() - 2;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let next = layer(&p[off..], acts.last().unwrap(), w[0], w[1], l < last);
            acts.push(next);
            off += w[1] * w[0] + w[1];
        }
        MlpCache { acts }
    }

    /// Accumulate dLoss/dparams into `grad` and return dLoss/dinput.
    pub fn backward(&self, p: &[f64], cache: &MlpCache, grad_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[1] * w[0] + w[1];
        }
        let mut delta = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < n_layers {
                // ReLU derivative at the layer's output
                for (d, a) in delta.iter_mut().zip(&cache.acts[l + 1]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &cache.acts[l];
            let o = offsets[l];
            let (gw, gb) = grad[o..o + n_out * n_in + n_out].split_at_mut(n_out * n_in);
            let weights = &p[o..o + n_out * n_in];
            let mut d_in = vec![0.0; n_in];
            for j in 0..n_out {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                gb[j] += dj;
                let row = &weights[j * n_in..(j + 1) * n_in];
                let grow = &mut gw[j * n_in..(j + 1) * n_in];
                for i in 0..n_in {
                    grow[i] += dj * input[i];
                    d_in[i] += dj * row[i];
                }
            }
            delta = d_in;
        }
        delta
    }
}

fn layer(p: &[f64], x: &[f64], n_in: usize, n_out: usize, relu: bool) -> Vec<f64> {
    let (w, rest) = p.split_at(n_out * n_in);
    let b = &rest[..n_out];
    (0..n_out)
        .map(|j| {
            let row = &w[j * n_in..(j + 1) * n_in];
            let z = b[j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            if relu {
                z.max(0.0)
            } else {
                z
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Gradient-descent state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        let moments = if kind == OptimizerKind::Adam { n_params } else { 0 };
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - self.beta1.powi(self.t as i32);
                let c2 = 1.0 - self.beta2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
                }
            }
        }
    }
}

/// Scale `grad` down so its L2 norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let shape = MlpShape::new(vec![4, 6, 5, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = vec![0.0; shape.n_params()];
        shape.init(&mut p, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |p: &[f64], x: &[f64]| -> f64 { shape.forward(p, x).iter().zip(&w).map(|(a, b)| a * b).sum() };

        let cache = shape.forward_cached(&p, &x);
        let mut g = vec![0.0; p.len()];
        let gx = shape.backward(&p, &cache, &w, &mut g);
        let h = 1e-6;
        for i in 0..p.len() {
            let mut a = p.clone();
            a[i] += h;
            let mut b = p.clone();
            b[i] -= h;
            let fd = (loss(&a, &x) - loss(&b, &x)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
        for i in 0..4 {
            let mut a = x.clone();
            a[i] += h;
            let mut b = x.clone();
            b[i] -= h;
            let fd = (loss(&p, &a) - loss(&p, &b)) / (2.0 * h);
            assert!((fd - gx[i]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn linear_net_is_affine() {
        let shape = MlpShape::new(vec![2, 2]).unwrap();
        // W = [[1, 2], [3, 4]], b = [0.5, -1]
        let p = [1.0, 2.0, 3.0, 4.0, 0.5, -1.0];
        assert_eq!(shape.forward(&p, &[1.0, 1.0]), vec![3.5, 6.0]);
        assert_eq!(shape.n_params(), 6);
    }

    #[test]
    fn sgd_and_adam_descend() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut p = vec![3.0, -2.0];
            let mut opt = Optimizer::new(kind, 0.1, 2);
            for _ in 0..500 {
                let g = vec![2.0 * p[0], 2.0 * p[1]];
                opt.step(&mut p, &g);
            }
            assert!(p.iter().all(|v| v.abs() < 1e-2), "{kind:?}: {p:?}");
        }
        let mut p = vec![1.0];
        Optimizer::new(OptimizerKind::Sgd, 0.0, 1).step(&mut p, &[5.0]);
        assert_eq!(p, vec![1.0]);
    }

    #[test]
    fn helpers() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15);
        assert_eq!(elu(2.0), 2.0);
        assert!((elu(-1.0) + 1.0 - (-1f64).exp()).abs() < 1e-15);
    }
}
