//! Two-drug response surface mapping effect-site concentrations to BIS.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdParams {
    pub e0: f64,
    pub emax: f64,
    /// µg/mL
    pub ce50_ppf: f64,
    /// µg/mL
    pub ce50_rftn: f64,
    pub gamma: f64,
    /// Multiplicative interaction; positive values mean remifentanil potentiates propofol.
    pub beta: f64,
    /// Time constant of the monitor's first-order smoothing, seconds; 0 disables it.
    #[serde(default = "default_bis_lag")]
    pub bis_lag_s: f64,
}

fn default_bis_lag() -> f64 {
    120.0
}

impl Default for PdParams {
    fn default() -> Self {
        Self {
            e0: 95.0,
            emax: 70.0,
            ce50_ppf: 4.0,
            ce50_rftn: 15.0,
            gamma: 2.0,
            beta: 2.0,
            bis_lag_s: default_bis_lag(),
        }
    }
}

impl PdParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.emax > 0.0
            && self.emax <= self.e0
            && self.e0 <= 100.0
            && self.ce50_ppf > 0.0
            && self.ce50_rftn > 0.0
            && self.gamma > 0.0
            && self.beta.is_finite()
            && self.bis_lag_s >= 0.0
            && self.bis_lag_s.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("invalid PD parameters {self:?}")))
        }
    }
}

/// BIS = E0 − Emax·U^γ/(1+U^γ), clamped to [0, 100], where U is the
/// interaction-weighted sum of normalized effect-site concentrations.
pub fn pd_bis(ce_ppf: f64, ce_rftn: f64, params: &PdParams) -> f64 {
    let up = ce_ppf.max(0.0) / params.ce50_ppf;
    let ur = ce_rftn.max(0.0) / params.ce50_rftn;
    let u = up + ur + params.beta * up * ur;
    let ug = u.powf(params.gamma);
    let effect = if ug.is_infinite() { 1.0 } else { ug / (1.0 + ug) };
    (params.e0 - params.emax * effect).clamp(0.0, 100.0)
}

/// Displayed BIS after `dt_s` seconds of first-order lag toward `target`.
pub fn bis_lag_step(bis: f64, target: f64, dt_s: f64, params: &PdParams) -> f64 {
    if params.bis_lag_s <= 0.0 {
        return target;
    }
    bis + (1.0 - (-dt_s / params.bis_lag_s).exp()) * (target - bis)
}
