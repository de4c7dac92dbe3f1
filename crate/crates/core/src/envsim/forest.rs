//! Bagged regression forest: the learned transition kernel.

use std::ops::Range;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{transition_input, TrainingSet};
use super::tree::{Tree, TreeParams};
use crate::error::{Error, Result};
use crate::io;
use crate::normalize::Normalizer;
use super::data::INPUT_NAMES;
use crate::types::{AnesthesiaState, TARGET_DIM, TARGET_FEATURE_INDEX, TARGET_NAMES};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub max_features: usize,
    /// Resample contiguous trajectory segments of this many rows.
    pub segment_len: usize,
    pub bootstrap: bool,
    /// Trees learn the one-step change of each target; the prediction adds
    /// it back to the current value.
    pub residual: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 5,
            max_features: 5,
            segment_len: 32,
            bootstrap: true,
            residual: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::config("a forest needs at least one tree"));
        }
        if self.min_leaf < 1 || self.max_features < 1 || self.segment_len < 1 {
            return Err(Error::config("min_leaf, max_features and segment_len must be positive"));
        }
        Ok(())
    }

    fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            max_features: self.max_features,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format_version: u32,
    pub config: ForestConfig,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    pub n_features: usize,
    pub n_outputs: usize,
    pub n_train_rows: usize,
    /// Scaling fitted on the training split; unfitted for generic matrices.
    pub normalizer: Normalizer,
    pub trees: Vec<Tree>,
}

/// Contiguous segments of at most `segment_len` rows, never leaving their
/// group, drawn until they cover as many rows as the data holds.
pub fn bootstrap_segments<R: Rng + ?Sized>(data: &TrainingSet, segment_len: usize, rng: &mut R) -> Vec<Range<usize>> {
    let n = data.rows();
    let mut group_of = Vec::with_capacity(n);
    for (g, r) in data.groups.iter().enumerate() {
        group_of.extend(std::iter::repeat_n(g, r.len()));
    }
    let mut segments = Vec::new();
    let mut covered = 0;
    while covered < n {
        let start = rng.random_range(0..n);
        let end = (start + segment_len).min(data.groups[group_of[start]].end);
        covered += end - start;
        segments.push(start..end);
    }
    segments
}

/// Bootstrap row sample of exactly `data.rows()` rows built from segments.
pub fn segment_bootstrap<R: Rng + ?Sized>(data: &TrainingSet, segment_len: usize, rng: &mut R) -> Vec<u32> {
    let mut rows: Vec<u32> = bootstrap_segments(data, segment_len, rng)
        .into_iter()
        .flat_map(|r| r.start as u32..r.end as u32)
        .collect();
    rows.truncate(data.rows());
    rows
}

/// Fit `cfg.n_trees` trees in parallel. Each tree's seed is drawn in order from
/// the master seed, so the result does not depend on scheduling.
pub fn fit_forest(data: &TrainingSet, cfg: &ForestConfig) -> Result<ForestModel> {
    cfg.validate()?;
    if data.rows() == 0 {
        return Err(Error::config("cannot fit a forest on zero rows"));
    }
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<u64> = (0..cfg.n_trees).map(|_| master.next_u64()).collect();
    let all_rows: Vec<u32> = (0..data.rows() as u32).collect();
    let params = cfg.tree_params();
    let trees = seeds
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if cfg.bootstrap {
                let rows = segment_bootstrap(data, cfg.segment_len, &mut rng);
                Tree::fit(data, &rows, params, &mut rng)
            } else {
                Tree::fit(data, &all_rows, params, &mut rng)
            }
        })
        .collect();
    let names = |given: &[&str], n: usize, prefix: &str| -> Vec<String> {
        if given.len() == n {
            given.iter().map(|s| s.to_string()).collect()
        } else {
            (0..n).map(|i| format!("{prefix}{i}")).collect()
        }
    };
    Ok(ForestModel {
        format_version: MODEL_FORMAT_VERSION,
        config: *cfg,
        feature_names: names(&INPUT_NAMES, data.n_features, "x"),
        target_names: names(&TARGET_NAMES, data.n_outputs, "y"),
        n_features: data.n_features,
        n_outputs: data.n_outputs,
        n_train_rows: data.rows(),
        normalizer: Normalizer::default(),
        trees,
    })
}

impl ForestModel {
    /// Mean of the trees' leaf vectors.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_features {
            return Err(Error::domain(format!(
                "model expects {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.n_outputs];
        for t in &self.trees {
            t.predict_into(x, &mut out);
        }
        let b = self.trees.len() as f64;
        out.iter_mut().for_each(|v| *v /= b);
        Ok(out)
    }

    /// Normalized next-step targets for a transition out of `state` with
    /// `dose_ml` infused during the step.
    pub fn predict_transition(&self, state: &AnesthesiaState, dose_ml: [f64; 2]) -> Result<[f64; TARGET_DIM]> {
        if !self.normalizer.is_fitted() {
            return Err(Error::config("environment model carries no fitted normalizer"));
        }
        let x = transition_input(&self.normalizer, state, dose_ml)?;
        let y = self.predict(&x)?;
        if y.len() != TARGET_DIM {
            return Err(Error::config("environment model was not fitted on anesthesia targets"));
        }
        Ok(std::array::from_fn(|k| {
            if self.config.residual {
                x[TARGET_FEATURE_INDEX[k]] + y[k]
            } else {
                y[k]
            }
        }))
    }

    /// Impurity decrease summed over trees and outputs, normalized to sum 1.
    pub fn feature_importance(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.n_features];
        for t in &self.trees {
            for (a, v) in imp.iter_mut().zip(&t.importance) {
                *a += v;
            }
        }
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            imp.iter_mut().for_each(|v| *v /= total);
        }
        imp
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)
            .map_err(|e| Error::data(format!("cannot open model {}: {e}", path.display())))?;
        let m: ForestModel = serde_json::from_reader(std::io::BufReader::new(f))?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::data(format!(
                "model format {} not supported (expected {MODEL_FORMAT_VERSION})",
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Importance rows `(feature, importance)` sorted by decreasing importance,
/// ties in feature order.
pub fn ranked_importance(model: &ForestModel) -> Vec<(String, f64)> {
    let mut v: Vec<(String, f64)> = model
        .feature_names
        .iter()
        .cloned()
        .zip(model.feature_importance())
        .collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1));
    v
}

pub fn write_importance_csv(path: &Path, model: &ForestModel) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["feature", "importance"])?;
    for (name, v) in ranked_importance(model) {
        w.write_record([name, io::fmt_f64(v)])?;
    }
    w.flush()?;
    Ok(())
}
