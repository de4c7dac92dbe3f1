//! Row-major design matrices for the transition model.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::normalize::Normalizer;
use crate::types::{AnesthesiaState, CaseRecord, STATE_DIM, TARGET_DIM, VOLUME_FEATURE_INDEX};

/// Paired inputs and outputs, with the row ranges that belong to each case.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub n_features: usize,
    pub n_outputs: usize,
    /// Contiguous row ranges, one per trajectory; bootstrap segments never cross them.
    pub groups: Vec<Range<usize>>,
}

impl TrainingSet {
    pub fn new(x: Vec<f64>, y: Vec<f64>, n_features: usize, n_outputs: usize, groups: Vec<Range<usize>>) -> Result<Self> {
        if n_features == 0 || n_outputs == 0 {
            return Err(Error::config("training set needs at least one feature and one output"));
        }
        if x.len() % n_features != 0 || y.len() % n_outputs != 0 || x.len() / n_features != y.len() / n_outputs {
            return Err(Error::config("X and Y row counts differ"));
        }
        let rows = x.len() / n_features;
        let covered: usize = groups.iter().map(|g| g.len()).sum();
        if covered != rows || groups.windows(2).any(|w| w[0].end != w[1].start) {
            return Err(Error::config("groups must tile the rows in order"));
        }
        Ok(Self {
            x,
            y,
            n_features,
            n_outputs,
            groups,
        })
    }

    pub fn rows(&self) -> usize {
        self.x.len() / self.n_features
    }

    pub fn x(&self, row: usize) -> &[f64] {
        &self.x[row * self.n_features..(row + 1) * self.n_features]
    }

    pub fn y(&self, row: usize) -> &[f64] {
        &self.y[row * self.n_outputs..(row + 1) * self.n_outputs]
    }
}

/// Names of the model inputs: the state features with the two cumulative
/// volumes replaced by the volumes infused during the step.
pub const INPUT_NAMES: [&str; STATE_DIM] = [
    "age", "sex", "weight", "height", "mbp", "bt", "hr", "rr", "ppf_cp", "ppf_ce", "rftn_cp", "rftn_ce", "ppf_dose",
    "rftn_dose", "bis",
];

/// Model input for a transition out of `state` when `dose_ml` is infused
/// during the step.
///
/// Cumulative totals only move the prediction through their difference,
/// which axis-aligned trees cannot form, so the volume slots carry the
/// per-step doses (in mL; trees are insensitive to monotone rescaling).
pub fn transition_input(norm: &Normalizer, state: &AnesthesiaState, dose_ml: [f64; 2]) -> Result<[f64; STATE_DIM]> {
    let mut f = norm.normalize(state)?;
    for (k, &i) in VOLUME_FEATURE_INDEX.iter().enumerate() {
        f[i] = dose_ml[k];
    }
    Ok(f)
}

/// Volumes infused between two consecutive states.
pub fn step_dose(state: &AnesthesiaState, next: &AnesthesiaState) -> [f64; 2] {
    [(next.ppf_vol - state.ppf_vol).max(0.0), (next.rftn_vol - state.rftn_vol).max(0.0)]
}

/// One (x_t, y_{t+1}) pair per consecutive step pair, never across cases.
/// Records shorter than two steps are skipped with a warning. With
/// `residual`, targets are the normalized changes `y_{t+1} - y_t`.
pub fn build_training_matrix(records: &[CaseRecord], norm: &Normalizer, residual: bool) -> Result<TrainingSet> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut groups = Vec::new();
    let mut row = 0;
    for rec in records {
        if rec.len() < 2 {
            log::warn!("{}: fewer than two steps, no transitions", rec.case_id);
            continue;
        }
        let start = row;
        for w in rec.steps.windows(2) {
            x.extend(transition_input(norm, &w[0], step_dose(&w[0], &w[1]))?);
            let next = norm.normalize_targets(&w[1].targets())?;
            if residual {
                let cur = norm.normalize_targets(&w[0].targets())?;
                y.extend(next.iter().zip(&cur).map(|(n, c)| n - c));
            } else {
                y.extend(next);
            }
            row += 1;
        }
        groups.push(start..row);
    }
    if row == 0 {
        return Err(Error::config("no transitions in the given records"));
    }
    TrainingSet::new(x, y, STATE_DIM, TARGET_DIM, groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::PatientProfile;

    fn record(id: &str, len: usize) -> CaseRecord {
        let p = PatientProfile::new(50, 0, 60.0, 165.0).unwrap();
        let steps = (0..len)
            .map(|t| {
                let mut s = AnesthesiaState::from_features(&[0.0; STATE_DIM], t);
                s.profile = p;
                s.bis = 90.0 - t as f64 * 0.1;
                s.ppf_vol = t as f64;
                s
            })
            .collect();
        CaseRecord {
            case_id: id.into(),
            profile: p,
            steps,
            start_time_s: 0.0,
        }
    }

    #[test]
    fn pair_counts() {
        let a = record("a", 120);
        let b = record("b", 120);
        let norm = Normalizer::fit(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(build_training_matrix(&[a.clone()], &norm, false).unwrap().rows(), 119);
        let both = build_training_matrix(&[a.clone(), b.clone()], &norm, false).unwrap();
        assert_eq!(both.rows(), 238);
        assert_eq!(both.groups, vec![0..119, 119..238]);
        // row 118 is the last pair of case a, whose target is a's final state
        let last_bis = norm.scale_feature(14, a.steps[119].bis).unwrap();
        assert_eq!(both.y(118)[8], last_bis);
        let first_b = norm.scale_feature(14, b.steps[1].bis).unwrap();
        assert_eq!(both.y(119)[8], first_b);
        assert!(build_training_matrix(&[record("c", 1)], &norm, false).is_err());
        assert_eq!(build_training_matrix(&[a, record("c", 1)], &norm, false).unwrap().rows(), 119);
    }

    #[test]
    fn dose_slots_hold_the_step_volume() {
        let a = record("a", 10);
        let norm = Normalizer::fit(&[a.clone()]).unwrap();
        let d = build_training_matrix(&[a.clone()], &norm, false).unwrap();
        assert_eq!(d.x(3)[12], a.steps[4].ppf_vol - a.steps[3].ppf_vol);
        assert_eq!(d.x(3)[13], a.steps[4].rftn_vol - a.steps[3].rftn_vol);
        assert_eq!(d.x(3)[14], norm.scale_feature(14, a.steps[3].bis).unwrap());
    }
}
