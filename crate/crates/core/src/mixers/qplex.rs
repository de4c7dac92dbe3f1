//! Duplex dueling mixing: Q_tot = sum V_i + sum lambda_i(s, a) * A_i.

use rand::Rng;

use crate::nn::{argmax, sigmoid, softplus, MlpCache, MlpShape};

#[derive(Debug, Clone)]
pub struct Qplex {
    pub n_agents: usize,
    pub n_actions: usize,
    /// `[state, one-hot a_1, ..., one-hot a_N] -> pre-softplus lambda_i`.
    pub lambda_net: MlpShape,
}

#[derive(Debug, Clone)]
pub struct QplexCache {
    c_lambda: MlpCache,
    greedy: Vec<usize>,
    actions: Vec<usize>,
    adv: Vec<f64>,
}

/// The dueling combination itself.
pub fn qplex_mix(values: &[f64], advantages: &[f64], lambdas: &[f64]) -> f64 {
    let v: f64 = values.iter().sum();
    v + advantages.iter().zip(lambdas).map(|(a, l)| a * l).sum::<f64>()
}

impl Qplex {
    pub fn new(n_agents: usize, n_actions: usize, state_dim: usize, hidden: usize) -> crate::Result<Self> {
        Ok(Self {
            n_agents,
            n_actions,
            lambda_net: MlpShape::with_hidden(state_dim + n_agents * n_actions, &[hidden], n_agents)?,
        })
    }

    pub fn n_params(&self) -> usize {
        self.lambda_net.n_params()
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        self.lambda_net.init(p, rng);
    }

    fn lambda_input(&self, state: &[f64], actions: &[usize]) -> Vec<f64> {
        let mut x = state.to_vec();
        for &a in actions {
            let mut oh = vec![0.0; self.n_actions];
            oh[a] = 1.0;
            x.extend(oh);
        }
        x
    }

    pub fn lambdas(&self, p: &[f64], state: &[f64], actions: &[usize]) -> Vec<f64> {
        self.lambda_net
            .forward(p, &self.lambda_input(state, actions))
            .into_iter()
            .map(softplus)
            .collect()
    }

    pub fn forward(&self, p: &[f64], q: &[Vec<f64>], actions: &[usize], state: &[f64]) -> (f64, QplexCache) {
        let c_lambda = self.lambda_net.forward_cached(p, &self.lambda_input(state, actions));
        let lambdas: Vec<f64> = c_lambda.output().iter().map(|&o| softplus(o)).collect();
        let greedy: Vec<usize> = q.iter().map(|qi| argmax(qi)).collect();
        let values: Vec<f64> = q.iter().zip(&greedy).map(|(qi, &g)| qi[g]).collect();
        let adv: Vec<f64> = q.iter().zip(actions).zip(&values).map(|((qi, &a), v)| qi[a] - v).collect();
        let q_tot = qplex_mix(&values, &adv, &lambdas);
        (
            q_tot,
            QplexCache {
                c_lambda,
                greedy,
                actions: actions.to_vec(),
                adv,
            },
        )
    }

    /// Accumulates into `grad_q` (per agent, per action) and `grad`.
    pub fn backward(&self, p: &[f64], cache: &QplexCache, d: f64, grad: &mut [f64], grad_q: &mut [Vec<f64>]) {
        let out = cache.c_lambda.output();
        let mut g_out = vec![0.0; self.n_agents];
        for i in 0..self.n_agents {
            let lambda = softplus(out[i]);
            grad_q[i][cache.greedy[i]] += d * (1.0 - lambda);
            grad_q[i][cache.actions[i]] += d * lambda;
            g_out[i] = d * cache.adv[i] * sigmoid(out[i]);
        }
        self.lambda_net.backward(p, &cache.c_lambda, &g_out, grad);
    }
}
