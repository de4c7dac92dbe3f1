//! One-step-ahead RMSE and R² on the normalized scale, averaged over cases.

use serde::{Deserialize, Serialize};

use super::data::step_dose;
use super::forest::ForestModel;
use crate::error::{Error, Result};
use crate::normalize::Normalizer;
use crate::types::{AnesthesiaState, CaseRecord, TARGET_DIM, TARGET_NAMES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMetrics {
    pub target: String,
    /// `None` when the method does not predict this target.
    pub rmse: Option<f64>,
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub method: String,
    pub n_cases: usize,
    pub targets: Vec<TargetMetrics>,
    /// Mean over the predicted targets.
    pub total_rmse: f64,
    pub total_r2: f64,
}

impl RegressionMetrics {
    pub fn target(&self, name: &str) -> Option<&TargetMetrics> {
        self.targets.iter().find(|t| t.target == name)
    }

    pub fn bis_rmse(&self) -> Option<f64> {
        self.target("bis").and_then(|t| t.rmse)
    }

    pub fn bis_r2(&self) -> Option<f64> {
        self.target("bis").and_then(|t| t.r2)
    }
}

/// RMSE and R² of one series. A constant truth gives R² = 1 when matched
/// exactly and 0 otherwise.
pub fn rmse_r2(truth: &[f64], pred: &[f64]) -> (f64, f64) {
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)).sum();
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    ((ss_res / n).sqrt(), r2)
}

/// Evaluate any one-step predictor. `predict(s_t, s_{t+1})` sees the next state
/// only to read the post-action cumulative volumes, and returns normalized
/// targets with NaN for targets it does not model.
pub fn evaluate_with<F>(method: &str, records: &[CaseRecord], norm: &Normalizer, predict: F) -> Result<RegressionMetrics>
where
    F: Fn(&AnesthesiaState, &AnesthesiaState) -> Result<[f64; TARGET_DIM]>,
{
    let usable: Vec<&CaseRecord> = records.iter().filter(|r| r.len() >= 2).collect();
    if usable.is_empty() {
        return Err(Error::config("evaluation needs at least one case with two steps"));
    }
    let mut rmse_sum = [0.0; TARGET_DIM];
    let mut r2_sum = [0.0; TARGET_DIM];
    let mut available = [true; TARGET_DIM];
    for rec in &usable {
        let n = rec.len() - 1;
        let mut truth = vec![Vec::with_capacity(n); TARGET_DIM];
        let mut pred = vec![Vec::with_capacity(n); TARGET_DIM];
        for w in rec.steps.windows(2) {
            let y = norm.normalize_targets(&w[1].targets())?;
            let p = predict(&w[0], &w[1])?;
            for k in 0..TARGET_DIM {
                truth[k].push(y[k]);
                pred[k].push(p[k]);
            }
        }
        for k in 0..TARGET_DIM {
            if pred[k].iter().any(|v| v.is_nan()) {
                available[k] = false;
                continue;
            }
            let (rmse, r2) = rmse_r2(&truth[k], &pred[k]);
            rmse_sum[k] += rmse;
            r2_sum[k] += r2;
        }
    }
    let m = usable.len() as f64;
    let targets: Vec<TargetMetrics> = (0..TARGET_DIM)
        .map(|k| TargetMetrics {
            target: TARGET_NAMES[k].to_string(),
            rmse: available[k].then(|| rmse_sum[k] / m),
            r2: available[k].then(|| r2_sum[k] / m),
        })
        .collect();
    let got: Vec<&TargetMetrics> = targets.iter().filter(|t| t.rmse.is_some()).collect();
    let g = got.len().max(1) as f64;
    Ok(RegressionMetrics {
        method: method.to_string(),
        n_cases: usable.len(),
        total_rmse: got.iter().filter_map(|t| t.rmse).sum::<f64>() / g,
        total_r2: got.iter().filter_map(|t| t.r2).sum::<f64>() / g,
        targets,
    })
}

/// Held-out metrics of a fitted environment model.
pub fn evaluate(model: &ForestModel, records: &[CaseRecord]) -> Result<RegressionMetrics> {
    if !model.normalizer.is_fitted() {
        return Err(Error::config("environment model carries no fitted normalizer"));
    }
    evaluate_with("RF", records, &model.normalizer, |s, next| {
        model.predict_transition(s, step_dose(s, next))
    })
}
