//! Population-mean two-compartment PK/PD predictor, the analytic baseline
//! the forest is compared against.

use serde::{Deserialize, Serialize};

use super::metrics::{evaluate_with, RegressionMetrics};
use crate::error::Result;
use crate::mg::{DRUG_MG_PER_ML, N_DRUGS};
use crate::normalize::Normalizer;
use crate::synth::{bis_lag_step, pd_bis, pk_step, Drug, PdParams, PkAmounts, PkParams};
use crate::types::{AnesthesiaState, CaseRecord, PatientProfile, TARGET_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PkpdPrediction {
    pub amounts: [PkAmounts; N_DRUGS],
    pub bis: f64,
    pub cp: [f64; N_DRUGS],
    pub ce: [f64; N_DRUGS],
}

pub fn population_pk(profile: &PatientProfile) -> [PkParams; N_DRUGS] {
    [
        PkParams::population(Drug::Propofol, profile),
        PkParams::population(Drug::Remifentanil, profile),
    ]
}

/// Advance known compartment amounts and displayed BIS by one 30 s step with
/// `volumes_ml` infused evenly over the step.
pub fn pkpd_baseline_step(
    amounts: [PkAmounts; N_DRUGS],
    bis: f64,
    volumes_ml: [f64; N_DRUGS],
    pk: &[PkParams; N_DRUGS],
    pd: &PdParams,
) -> Result<PkpdPrediction> {
    let mut next = amounts;
    let mut bis = bis;
    let per_s: [f64; N_DRUGS] = std::array::from_fn(|d| volumes_ml[d] / 30.0 * DRUG_MG_PER_ML);
    for _ in 0..30 {
        for d in 0..N_DRUGS {
            next[d] = pk_step(next[d], &pk[d], per_s[d], 1.0)?;
        }
        bis = bis_lag_step(bis, pd_bis(next[0].ce, next[1].ce, pd), 1.0, pd);
    }
    let cp = [next[0].cp(&pk[0]), next[1].cp(&pk[1])];
    let ce = [next[0].ce, next[1].ce];
    Ok(PkpdPrediction {
        amounts: next,
        bis,
        cp,
        ce,
    })
}

/// Compartment amounts implied by an observed state. The peripheral
/// compartment is not observed and is assumed in equilibrium with plasma.
pub fn amounts_from_state(state: &AnesthesiaState, pk: &[PkParams; N_DRUGS]) -> [PkAmounts; N_DRUGS] {
    let cp = [state.ppf_cp, state.rftn_cp];
    let ce = [state.ppf_ce, state.rftn_ce];
    std::array::from_fn(|d| {
        let central = cp[d] * pk[d].v1;
        PkAmounts {
            central,
            peripheral: central * pk[d].k12 / pk[d].k21,
            ce: ce[d],
        }
    })
}

/// One-step prediction of BIS and the four concentrations from a state and
/// the volumes infused during the step, with population-mean parameters.
pub fn pkpd_baseline_predict(state: &AnesthesiaState, volumes_ml: [f64; N_DRUGS], pd: &PdParams) -> Result<PkpdPrediction> {
    let pk = population_pk(&state.profile);
    pkpd_baseline_step(amounts_from_state(state, &pk), state.bis, volumes_ml, &pk, pd)
}

/// Held-out metrics of the baseline; vitals are outside its scope.
pub fn evaluate_baseline(records: &[CaseRecord], norm: &Normalizer, pd: &PdParams) -> Result<RegressionMetrics> {
    evaluate_with("PKPD", records, norm, |s, next| {
        let vol = [next.ppf_vol - s.ppf_vol, next.rftn_vol - s.rftn_vol];
        let p = pkpd_baseline_predict(s, vol.map(|v| v.max(0.0)), pd)?;
        let mut full = s.targets();
        full[4] = p.cp[0];
        full[5] = p.ce[0];
        full[6] = p.cp[1];
        full[7] = p.ce[1];
        full[8] = p.bis;
        let y = norm.normalize_targets(&full)?;
        let mut out = [f64::NAN; TARGET_DIM];
        out[4..].copy_from_slice(&y[4..]);
        Ok(out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_state_zero_action() {
        let mut s = AnesthesiaState::from_features(&[0.0; 15], 0);
        s.profile = PatientProfile::new(50, 1, 70.0, 170.0).unwrap();
        let pd = PdParams::default();
        s.bis = pd.e0;
        let p = pkpd_baseline_predict(&s, [0.0, 0.0], &pd).unwrap();
        assert_eq!(p.cp, [0.0, 0.0]);
        assert_eq!(p.ce, [0.0, 0.0]);
        assert_eq!(p.bis, pd.e0);
    }

    #[test]
    fn dosing_lowers_predicted_bis() {
        let mut s = AnesthesiaState::from_features(&[0.0; 15], 0);
        s.profile = PatientProfile::new(50, 1, 70.0, 170.0).unwrap();
        let pd = PdParams::default();
        let mut amounts = amounts_from_state(&s, &population_pk(&s.profile));
        let pk = population_pk(&s.profile);
        let mut last = pd.e0;
        for _ in 0..6 {
            let p = pkpd_baseline_step(amounts, last, [3.0, 0.2], &pk, &pd).unwrap();
            assert!(p.bis < last);
            last = p.bis;
            amounts = p.amounts;
        }
    }
}
