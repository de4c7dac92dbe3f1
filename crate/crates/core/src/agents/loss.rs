//! Mean squared TD error at the Q_tot level and its gradient.

use super::model::QModel;
use super::replay::Transition;
use super::td_target;
use crate::error::{Error, Result};
use crate::mixers::wqmix_weight;

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// `(1/B) Σ w (y − Q_tot(s, a; params))² + (1/B) Σ aux` with targets from
/// the model's frozen target parameters.
///
/// `w` is 1 except for the weighted QMIX variants. Their `Q*` is the
/// current Q_tot at its own greedy joint action.
pub fn mse_loss(model: &QModel, params: &[f64], batch: &[&Transition], gamma: f64) -> Result<LossOutput> {
    regularized_loss(model, params, batch, gamma, 0.0)
}

/// `mse_loss` plus `(c/B) Σ_i (logsumexp_a Q_i(s, a) − Q_i(s, a_i))`, which
/// pushes down utilities of actions absent from the batch. Meant for offline
/// data, where unlogged actions are otherwise valued by extrapolation alone.
pub fn regularized_loss(model: &QModel, params: &[f64], batch: &[&Transition], gamma: f64, conservative: f64) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::config("loss needs a non-empty batch"));
    }
    let kind = model.config.kind;
    let alpha = model.config.mixer.alpha;
    let mr = model.mixer_range();
    let pm = &params[mr.clone()];
    let b = batch.len() as f64;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for t in batch {
        let q_next = if t.done { 0.0 } else { model.greedy_with(&model.target, &t.next_state).1 };
        let y = td_target(t.reward, q_next, gamma, t.done);

        let caches = model.utilities_cached(params, &t.state);
        let q: Vec<Vec<f64>> = caches.iter().map(|c| c.output().to_vec()).collect();
        let out = model.mixer.forward(pm, &q, &t.actions, &t.state);
        let w = if kind.is_weighted() {
            let (u_star, q_star) = model.mixer.exhaustive_argmax(pm, &q, &t.state);
            wqmix_weight(kind, out.q_tot, y, &t.actions, &u_star, q_star, alpha)?
        } else {
            1.0
        };
        let err = y - out.q_tot;
        loss += (w * err * err + out.aux) / b;

        let mut grad_q = vec![vec![0.0; model.config.n_actions]; model.config.n_agents];
        model
            .mixer
            .backward(pm, &out.cache, -2.0 * w * err / b, 1.0 / b, &mut grad[mr.clone()], &mut grad_q);
        if conservative > 0.0 {
            for (i, qi) in q.iter().enumerate() {
                let m = qi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = qi.iter().map(|v| (v - m).exp()).sum();
                loss += conservative * (m + z.ln() - qi[t.actions[i]]) / b;
                for (a, v) in qi.iter().enumerate() {
                    grad_q[i][a] += conservative * (v - m).exp() / z / b;
                }
                grad_q[i][t.actions[i]] -= conservative / b;
            }
        }
        for (i, c) in caches.iter().enumerate() {
            let r = model.agent_range(i);
            model.agent.backward(&params[r.clone()], c, &grad_q[i], &mut grad[r]);
        }
    }
    if !loss.is_finite() {
        return Err(Error::Divergence { loss });
    }
    Ok(LossOutput { loss, grad })
}
