//! Learned transition kernel: a random forest over anesthesia states, its
//! evaluation, and the analytic PK/PD baseline.

pub mod baseline;
pub mod data;
pub mod env;
pub mod forest;
pub mod metrics;
pub mod tree;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use baseline::{evaluate_baseline, pkpd_baseline_predict, pkpd_baseline_step, PkpdPrediction};
pub use data::{build_training_matrix, step_dose, transition_input, TrainingSet, INPUT_NAMES};
pub use env::{step_environment, Episode, ForestEnv};
pub use forest::{fit_forest, ForestConfig, ForestModel};
pub use metrics::{evaluate, RegressionMetrics};

use crate::error::Result;
use crate::normalize::Normalizer;
use crate::types::CaseRecord;

/// Fit the normalizer and the forest on training records.
pub fn train_env(train: &[CaseRecord], cfg: &ForestConfig) -> Result<ForestModel> {
    let norm = Normalizer::fit(train)?;
    let data = build_training_matrix(train, &norm, cfg.residual)?;
    let mut model = fit_forest(&data, cfg)?;
    model.normalizer = norm;
    Ok(model)
}

/// Rows of `env_metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvMetricsReport {
    pub split: String,
    pub methods: Vec<RegressionMetrics>,
    /// `(feature, importance)` ranked by decreasing importance.
    pub feature_importance: Vec<(String, f64)>,
}

pub fn write_env_metrics(path: &Path, report: &EnvMetricsReport) -> Result<()> {
    crate::io::write_json(path, report)
}
