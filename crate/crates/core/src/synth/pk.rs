//! Two-compartment pharmacokinetics with an effect-site link.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::PatientProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Drug {
    Propofol,
    Remifentanil,
}

/// Rate constants are per minute, `v1` in litres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PkParams {
    pub v1: f64,
    pub k10: f64,
    pub k12: f64,
    pub k21: f64,
    pub ke0: f64,
}

impl PkParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.v1, self.k10, self.k12, self.k21, self.ke0];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::domain(format!("PK parameters must be positive: {self:?}")))
        }
    }

    /// Population-mean parameters scaled from body weight (and age for clearance).
    pub fn population(drug: Drug, profile: &PatientProfile) -> Self {
        let age_factor = (1.0 - 0.004 * (profile.age as f64 - 50.0)).clamp(0.6, 1.3);
        match drug {
            Drug::Propofol => Self {
                v1: 0.228 * profile.weight,
                k10: 0.119 * age_factor,
                k12: 0.112,
                k21: 0.055,
                ke0: 0.26,
            },
            Drug::Remifentanil => Self {
                v1: 0.07 * profile.weight,
                k10: 0.45 * age_factor,
                k12: 0.3,
                k21: 0.1,
                ke0: 0.6,
            },
        }
    }

    /// Multiply every parameter by an independent factor drawn from `1 ± spread`.
    pub fn perturbed<R: Rng + ?Sized>(&self, spread: f64, rng: &mut R) -> Self {
        let mut f = || 1.0 + spread * (2.0 * rng.random::<f64>() - 1.0);
        Self {
            v1: self.v1 * f(),
            k10: self.k10 * f(),
            k12: self.k12 * f(),
            k21: self.k21 * f(),
            ke0: self.ke0 * f(),
        }
    }

    /// Plasma concentration reached under a constant infusion (mg/min) at steady state.
    pub fn steady_state_cp(&self, rate_mg_per_min: f64) -> f64 {
        rate_mg_per_min / (self.v1 * self.k10)
    }
}

/// Central and peripheral drug amounts (mg) and effect-site concentration (µg/mL).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PkAmounts {
    pub central: f64,
    pub peripheral: f64,
    pub ce: f64,
}

impl PkAmounts {
    /// Plasma concentration in µg/mL (= mg/L).
    pub fn cp(&self, params: &PkParams) -> f64 {
        self.central / params.v1
    }
}

/// Advance the compartments by `dt_s` seconds while `infusion_mg` is delivered
/// at a constant rate. Explicit Euler with sub-steps of at most one second.
pub fn pk_step(amounts: PkAmounts, params: &PkParams, infusion_mg: f64, dt_s: f64) -> Result<PkAmounts> {
    if infusion_mg < 0.0 || !infusion_mg.is_finite() {
        return Err(Error::domain(format!("negative infusion {infusion_mg} mg")));
    }
    if !(dt_s > 0.0) {
        return Err(Error::domain(format!("time step {dt_s} s must be positive")));
    }
    let n = dt_s.ceil().max(1.0) as usize;
    let h = dt_s / n as f64;
    let rate = infusion_mg / dt_s; // mg/s
    let (k10, k12, k21, ke0) = (
        params.k10 / 60.0,
        params.k12 / 60.0,
        params.k21 / 60.0,
        params.ke0 / 60.0,
    );
    let mut a = amounts;
    for _ in 0..n {
        let cp = a.central / params.v1;
        let d1 = rate - (k10 + k12) * a.central + k21 * a.peripheral;
        let d2 = k12 * a.central - k21 * a.peripheral;
        let de = ke0 * (cp - a.ce);
        a = PkAmounts {
            central: a.central + h * d1,
            peripheral: a.peripheral + h * d2,
            ce: a.ce + h * de,
        };
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> PkParams {
        PkParams::population(Drug::Propofol, &PatientProfile::new(50, 1, 70.0, 175.0).unwrap())
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let a = pk_step(PkAmounts::default(), &params(), 0.0, 30.0).unwrap();
        assert_eq!(a, PkAmounts::default());
    }

    #[test]
    fn closed_system_conserves_mass() {
        let p = PkParams { k10: 0.0, ..params() };
        let mut a = PkAmounts {
            central: 100.0,
            peripheral: 20.0,
            ce: 0.0,
        };
        for _ in 0..1000 {
            a = pk_step(a, &p, 0.0, 1.0).unwrap();
        }
        assert!((a.central + a.peripheral - 120.0).abs() < 1e-6);
    }

    #[test]
    fn constant_infusion_reaches_analytic_steady_state() {
        let p = params();
        let rate_mg_min = 7.0;
        let mut a = PkAmounts::default();
        // 24 h of 30 s steps
        for _ in 0..(24 * 120) {
            a = pk_step(a, &p, rate_mg_min / 2.0, 30.0).unwrap();
        }
        let expected = p.steady_state_cp(rate_mg_min);
        assert!((a.cp(&p) - expected).abs() / expected < 0.01, "{} vs {expected}", a.cp(&p));
        assert!((a.ce - expected).abs() / expected < 0.01);
    }

    #[test]
    fn superposition_in_infusion() {
        let p = params();
        let start = PkAmounts {
            central: 12.0,
            peripheral: 3.0,
            ce: 0.4,
        };
        let both = pk_step(start, &p, 5.0 + 2.5, 30.0).unwrap();
        let first = pk_step(start, &p, 5.0, 30.0).unwrap();
        let second = pk_step(PkAmounts::default(), &p, 2.5, 30.0).unwrap();
        let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(1e-12);
        assert!(rel(both.central, first.central + second.central) < 1e-9);
        assert!(rel(both.peripheral, first.peripheral + second.peripheral) < 1e-9);
        assert!(rel(both.ce, first.ce + second.ce) < 1e-9);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(pk_step(PkAmounts::default(), &params(), -1.0, 30.0).is_err());
        assert!(pk_step(PkAmounts::default(), &params(), 1.0, 0.0).is_err());
    }
}
