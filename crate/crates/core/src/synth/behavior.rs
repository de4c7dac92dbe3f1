//! Scripted "clinician" dosing policy: induction bolus, near-constant
//! maintenance, and a slow reaction when BIS leaves the 40–60 band.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::mg::N_DRUGS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorConfig {
    /// Induction bolus per drug (mL per kg), spread over `bolus_steps`.
    pub bolus_ml_per_kg: [f64; N_DRUGS],
    pub bolus_steps: usize,
    /// Maintenance volume per drug (mL per kg per 30 s step).
    pub maintenance_ml_per_kg: [f64; N_DRUGS],
    /// Per-case multiplicative spread of the maintenance rate (clinician style).
    pub maintenance_spread: f64,
    /// Extra mL per BIS unit outside the deadband.
    pub gain_ml_per_bis: [f64; N_DRUGS],
    pub deadband: (f64, f64),
    /// Relative standard deviation of per-step dose noise.
    pub noise_scale: f64,
    /// Per-step volume cap per drug (mL).
    pub max_ml: [f64; N_DRUGS],
    /// Per-step chance, per drug, that the clinician moves to a new maintenance multiplier.
    pub regime_switch_prob: f64,
    /// Per-drug range the new multiplier is drawn from, uniformly; 0 pauses the pump.
    pub regime_range: [(f64, f64); N_DRUGS],
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            bolus_ml_per_kg: [0.1, 0.004],
            bolus_steps: 2,
            maintenance_ml_per_kg: [0.003, 0.0016],
            maintenance_spread: 0.3,
            gain_ml_per_bis: [0.01, 0.002],
            deadband: (40.0, 60.0),
            noise_scale: 0.15,
            max_ml: [5.0, 1.0],
            regime_switch_prob: 0.03,
            regime_range: [(0.0, 2.0), (0.6, 1.4)],
        }
    }
}

/// A policy instance bound to one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorPolicy {
    pub bolus_ml: [f64; N_DRUGS],
    pub bolus_steps: usize,
    pub maintenance_ml: [f64; N_DRUGS],
    pub gain_ml_per_bis: [f64; N_DRUGS],
    pub deadband: (f64, f64),
    pub noise_scale: f64,
    pub max_ml: [f64; N_DRUGS],
    pub regime_switch_prob: f64,
    pub regime_range: [(f64, f64); N_DRUGS],
    /// Current maintenance multiplier per drug.
    pub regime: [f64; N_DRUGS],
}

impl BehaviorPolicy {
    /// Instantiate the configured policy for a patient, drawing its maintenance style.
    pub fn for_patient<R: Rng + ?Sized>(cfg: &BehaviorConfig, weight: f64, rng: &mut R) -> Self {
        let style = 1.0 + cfg.maintenance_spread * (2.0 * rng.random::<f64>() - 1.0);
        Self {
            bolus_ml: cfg.bolus_ml_per_kg.map(|b| b * weight),
            bolus_steps: cfg.bolus_steps,
            maintenance_ml: cfg.maintenance_ml_per_kg.map(|m| m * weight * style),
            gain_ml_per_bis: cfg.gain_ml_per_bis,
            deadband: cfg.deadband,
            noise_scale: cfg.noise_scale,
            max_ml: cfg.max_ml,
            regime_switch_prob: cfg.regime_switch_prob,
            regime_range: cfg.regime_range,
            regime: [1.0; N_DRUGS],
        }
    }

    /// Never doses.
    pub fn zero() -> Self {
        Self {
            bolus_ml: [0.0; N_DRUGS],
            bolus_steps: 0,
            maintenance_ml: [0.0; N_DRUGS],
            gain_ml_per_bis: [0.0; N_DRUGS],
            deadband: (40.0, 60.0),
            noise_scale: 0.0,
            max_ml: [5.0, 1.0],
            regime_switch_prob: 0.0,
            regime_range: [(1.0, 1.0); N_DRUGS],
            regime: [1.0; N_DRUGS],
        }
    }

    /// Volumes (mL) to infuse over the next 30 s step given the BIS shown on the monitor.
    pub fn volumes<R: Rng + ?Sized>(&mut self, step: usize, observed_bis: f64, rng: &mut R) -> [f64; N_DRUGS] {
        if step >= self.bolus_steps && self.regime_switch_prob > 0.0 {
            for (r, (lo, hi)) in self.regime.iter_mut().zip(self.regime_range) {
                if rng.random::<f64>() < self.regime_switch_prob {
                    *r = lo + (hi - lo) * rng.random::<f64>();
                }
            }
        }
        let (lo, hi) = self.deadband;
        let error = if observed_bis > hi {
            observed_bis - hi
        } else if observed_bis < lo {
            observed_bis - lo
        } else {
            0.0
        };
        std::array::from_fn(|d| {
            let planned = if step < self.bolus_steps {
                self.bolus_ml[d] / self.bolus_steps as f64
            } else {
                self.maintenance_ml[d] * self.regime[d] + self.gain_ml_per_bis[d] * error
            };
            let noise: f64 = rng.sample(StandardNormal);
            (planned * (1.0 + self.noise_scale * noise)).clamp(0.0, self.max_ml[d])
        })
    }
}
