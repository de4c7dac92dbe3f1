//! Min-max scaling of the 15 state indicators, fit on the training split.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AnesthesiaState, CaseRecord, STATE_DIM, TARGET_DIM, TARGET_FEATURE_INDEX};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    fn is_constant(&self) -> bool {
        !(self.max > self.min)
    }

    fn scale(&self, v: f64) -> f64 {
        if self.is_constant() {
            v
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }

    fn unscale(&self, v: f64) -> f64 {
        if self.is_constant() {
            v
        } else {
            v * (self.max - self.min) + self.min
        }
    }
}

/// Per-indicator (min, max). Constant indicators pass through unscaled and
/// out-of-range values are not clamped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    ranges: Vec<Range>,
}

impl Normalizer {
    pub fn from_ranges(ranges: Vec<Range>) -> Result<Self> {
        if ranges.len() != STATE_DIM {
            return Err(Error::config(format!(
                "normalizer needs {STATE_DIM} ranges, got {}",
                ranges.len()
            )));
        }
        Ok(Self { ranges })
    }

    pub fn fit(records: &[CaseRecord]) -> Result<Self> {
        let mut ranges = vec![
            Range {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            };
            STATE_DIM
        ];
        let mut seen = false;
        for s in records.iter().flat_map(|r| r.steps.iter()) {
            seen = true;
            for (r, v) in ranges.iter_mut().zip(s.features()) {
                r.min = r.min.min(v);
                r.max = r.max.max(v);
            }
        }
        if !seen {
            return Err(Error::config("cannot fit a normalizer on zero steps"));
        }
        Ok(Self { ranges })
    }

    pub fn is_fitted(&self) -> bool {
        self.ranges.len() == STATE_DIM
    }

    pub fn ranges(&self) -> &[Range] {
        &self.ranges
    }

    fn check(&self) -> Result<()> {
        if self.is_fitted() {
            Ok(())
        } else {
            Err(Error::config("normalizer is not fitted"))
        }
    }

    pub fn normalize(&self, state: &AnesthesiaState) -> Result<[f64; STATE_DIM]> {
        self.normalize_features(&state.features())
    }

    pub fn normalize_features(&self, f: &[f64; STATE_DIM]) -> Result<[f64; STATE_DIM]> {
        self.check()?;
        Ok(std::array::from_fn(|i| self.ranges[i].scale(f[i])))
    }

    pub fn denormalize_features(&self, f: &[f64; STATE_DIM]) -> Result<[f64; STATE_DIM]> {
        self.check()?;
        Ok(std::array::from_fn(|i| self.ranges[i].unscale(f[i])))
    }

    pub fn denormalize(&self, f: &[f64; STATE_DIM], t: usize) -> Result<AnesthesiaState> {
        Ok(AnesthesiaState::from_features(&self.denormalize_features(f)?, t))
    }

    pub fn normalize_targets(&self, y: &[f64; TARGET_DIM]) -> Result<[f64; TARGET_DIM]> {
        self.check()?;
        Ok(std::array::from_fn(|i| {
            self.ranges[TARGET_FEATURE_INDEX[i]].scale(y[i])
        }))
    }

    pub fn denormalize_targets(&self, y: &[f64]) -> Result<[f64; TARGET_DIM]> {
        self.check()?;
        if y.len() != TARGET_DIM {
            return Err(Error::domain(format!("expected {TARGET_DIM} targets, got {}", y.len())));
        }
        Ok(std::array::from_fn(|i| {
            self.ranges[TARGET_FEATURE_INDEX[i]].unscale(y[i])
        }))
    }

    /// Scale a single indicator given its feature index.
    pub fn scale_feature(&self, index: usize, v: f64) -> Result<f64> {
        self.check()?;
        Ok(self.ranges[index].scale(v))
    }
}
