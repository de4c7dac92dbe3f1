//! Domain value types: patients, per-step anesthesia states, raw device tracks
//! and aligned case records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of scalar indicators in an [`AnesthesiaState`] (profile included).
pub const STATE_DIM: usize = 15;

/// Number of dynamic indicators predicted by the environment model.
pub const TARGET_DIM: usize = 9;

/// Feature order used everywhere a state is flattened:
/// demographics, vitals, PK/PD concentrations, cumulative volumes, BIS.
pub const FEATURE_NAMES: [&str; STATE_DIM] = [
    "age", "sex", "weight", "height", "mbp", "bt", "hr", "rr", "ppf_cp", "ppf_ce", "rftn_cp",
    "rftn_ce", "ppf_vol", "rftn_vol", "bis",
];

/// Predicted indicators: vitals, concentrations and BIS at the next step.
pub const TARGET_NAMES: [&str; TARGET_DIM] = [
    "mbp", "bt", "hr", "rr", "ppf_cp", "ppf_ce", "rftn_cp", "rftn_ce", "bis",
];

/// Position of each target inside the feature vector.
pub const TARGET_FEATURE_INDEX: [usize; TARGET_DIM] = [4, 5, 6, 7, 8, 9, 10, 11, 14];

/// Feature positions of the two cumulative volume indicators.
pub const VOLUME_FEATURE_INDEX: [usize; 2] = [12, 13];

/// Feature position of BIS.
pub const BIS_FEATURE: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub age: u32,
    /// 0 = female, 1 = male.
    pub sex: u8,
    /// kg
    pub weight: f64,
    /// cm
    pub height: f64,
}

impl PatientProfile {
    pub fn new(age: u32, sex: u8, weight: f64, height: f64) -> Result<Self> {
        let p = Self {
            age,
            sex,
            weight,
            height,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.age > 1 && self.age < 120) {
            return Err(Error::domain(format!("age {} outside (1, 120)", self.age)));
        }
        if self.sex > 1 {
            return Err(Error::domain(format!("sex flag {} is not 0/1", self.sex)));
        }
        if !(self.weight.is_finite() && self.weight > 20.0 && self.weight < 250.0) {
            return Err(Error::domain(format!("weight {} outside (20, 250)", self.weight)));
        }
        if !(self.height.is_finite() && self.height > 100.0 && self.height < 230.0) {
            return Err(Error::domain(format!("height {} outside (100, 230)", self.height)));
        }
        Ok(())
    }
}

/// One row of a case: the Markov-game state at a 30 s step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnesthesiaState {
    pub profile: PatientProfile,
    pub bis: f64,
    pub mbp: f64,
    pub bt: f64,
    pub hr: f64,
    pub rr: f64,
    pub ppf_cp: f64,
    pub ppf_ce: f64,
    pub rftn_cp: f64,
    pub rftn_ce: f64,
    /// Cumulative infused propofol volume (mL).
    pub ppf_vol: f64,
    /// Cumulative infused remifentanil volume (mL).
    pub rftn_vol: f64,
    /// Step index in 30 s units.
    pub t: usize,
}

impl AnesthesiaState {
    pub fn features(&self) -> [f64; STATE_DIM] {
        let p = &self.profile;
        [
            p.age as f64,
            p.sex as f64,
            p.weight,
            p.height,
            self.mbp,
            self.bt,
            self.hr,
            self.rr,
            self.ppf_cp,
            self.ppf_ce,
            self.rftn_cp,
            self.rftn_ce,
            self.ppf_vol,
            self.rftn_vol,
            self.bis,
        ]
    }

    /// Inverse of [`features`](Self::features). Age and sex are rounded back to integers.
    pub fn from_features(f: &[f64; STATE_DIM], t: usize) -> Self {
        Self {
            profile: PatientProfile {
                age: f[0].round().max(0.0) as u32,
                sex: f[1].round().clamp(0.0, 1.0) as u8,
                weight: f[2],
                height: f[3],
            },
            mbp: f[4],
            bt: f[5],
            hr: f[6],
            rr: f[7],
            ppf_cp: f[8],
            ppf_ce: f[9],
            rftn_cp: f[10],
            rftn_ce: f[11],
            ppf_vol: f[12],
            rftn_vol: f[13],
            bis: f[14],
            t,
        }
    }

    pub fn targets(&self) -> [f64; TARGET_DIM] {
        let f = self.features();
        TARGET_FEATURE_INDEX.map(|i| f[i])
    }

    pub fn indicator(&self, ind: Indicator) -> f64 {
        match ind {
            Indicator::Bis => self.bis,
            Indicator::Mbp => self.mbp,
            Indicator::Bt => self.bt,
            Indicator::Hr => self.hr,
            Indicator::Rr => self.rr,
            Indicator::PpfCp => self.ppf_cp,
            Indicator::PpfCe => self.ppf_ce,
            Indicator::RftnCp => self.rftn_cp,
            Indicator::RftnCe => self.rftn_ce,
            Indicator::PpfVol => self.ppf_vol,
            Indicator::RftnVol => self.rftn_vol,
        }
    }

    pub fn set_indicator(&mut self, ind: Indicator, v: f64) {
        match ind {
            Indicator::Bis => self.bis = v,
            Indicator::Mbp => self.mbp = v,
            Indicator::Bt => self.bt = v,
            Indicator::Hr => self.hr = v,
            Indicator::Rr => self.rr = v,
            Indicator::PpfCp => self.ppf_cp = v,
            Indicator::PpfCe => self.ppf_ce = v,
            Indicator::RftnCp => self.rftn_cp = v,
            Indicator::RftnCe => self.rftn_ce = v,
            Indicator::PpfVol => self.ppf_vol = v,
            Indicator::RftnVol => self.rftn_vol = v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        if !self.features().iter().all(|v| v.is_finite()) {
            return Err(Error::domain("non-finite indicator in state"));
        }
        if !(0.0..=100.0).contains(&self.bis) {
            return Err(Error::domain(format!("BIS {} outside [0, 100]", self.bis)));
        }
        let conc = [self.ppf_cp, self.ppf_ce, self.rftn_cp, self.rftn_ce];
        if conc.iter().any(|&c| c < 0.0) {
            return Err(Error::domain("negative concentration"));
        }
        Ok(())
    }
}

/// The eleven indicators recorded by devices (everything but demographics).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indicator {
    Bis,
    Mbp,
    Bt,
    Hr,
    Rr,
    PpfCp,
    PpfCe,
    RftnCp,
    RftnCe,
    PpfVol,
    RftnVol,
}

impl Indicator {
    pub const ALL: [Indicator; 11] = [
        Indicator::Bis,
        Indicator::Mbp,
        Indicator::Bt,
        Indicator::Hr,
        Indicator::Rr,
        Indicator::PpfCp,
        Indicator::PpfCe,
        Indicator::RftnCp,
        Indicator::RftnCe,
        Indicator::PpfVol,
        Indicator::RftnVol,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Indicator::Bis => "bis",
            Indicator::Mbp => "mbp",
            Indicator::Bt => "bt",
            Indicator::Hr => "hr",
            Indicator::Rr => "rr",
            Indicator::PpfCp => "ppf_cp",
            Indicator::PpfCe => "ppf_ce",
            Indicator::RftnCp => "rftn_cp",
            Indicator::RftnCe => "rftn_ce",
            Indicator::PpfVol => "ppf_vol",
            Indicator::RftnVol => "rftn_vol",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|i| i.name() == s)
    }

    /// Sampling cadence of the virtual device that records this indicator.
    pub fn cadence_s(self) -> f64 {
        match self {
            Indicator::Mbp | Indicator::Bt | Indicator::Hr | Indicator::Rr => 2.0,
            _ => 1.0,
        }
    }
}

impl std::fmt::Display for Indicator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One (case, indicator) time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTrack {
    pub case_id: String,
    pub indicator: Indicator,
    /// (time in seconds, value), strictly increasing in time.
    pub samples: Vec<(f64, f64)>,
}

impl TrajectoryTrack {
    pub fn new(case_id: impl Into<String>, indicator: Indicator, samples: Vec<(f64, f64)>) -> Self {
        Self {
            case_id: case_id.into(),
            indicator,
            samples,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.samples.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::data(format!(
                    "{}/{}: times not strictly increasing at {}",
                    self.case_id, self.indicator, w[1].0
                )));
            }
        }
        if self.samples.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::data(format!(
                "{}/{}: non-finite sample",
                self.case_id, self.indicator
            )));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn start_time(&self) -> Option<f64> {
        self.samples.first().map(|s| s.0)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.1)
    }
}

/// Aligned per-case table at a uniform 30 s grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub profile: PatientProfile,
    pub steps: Vec<AnesthesiaState>,
    /// Earliest raw BIS time before alignment shifted the grid. Not part of the
    /// CSV interchange format; records read back from disk carry 0.
    #[serde(default)]
    pub start_time_s: f64,
}

impl CaseRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn bis_series(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.bis).collect()
    }

    /// Split a record back into one 30 s-cadence track per indicator, anchored
    /// at `start_time_s`.
    pub fn to_tracks(&self) -> Vec<TrajectoryTrack> {
        Indicator::ALL
            .iter()
            .map(|&ind| {
                let samples = self
                    .steps
                    .iter()
                    .map(|s| (self.start_time_s + s.t as f64 * 30.0, s.indicator(ind)))
                    .collect();
                TrajectoryTrack::new(self.case_id.clone(), ind, samples)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> AnesthesiaState {
        AnesthesiaState {
            profile: PatientProfile::new(54, 1, 71.5, 172.0).unwrap(),
            bis: 48.2,
            mbp: 81.0,
            bt: 36.4,
            hr: 66.0,
            rr: 12.0,
            ppf_cp: 3.1,
            ppf_ce: 2.9,
            rftn_cp: 1.2,
            rftn_ce: 1.1,
            ppf_vol: 40.5,
            rftn_vol: 6.25,
            t: 17,
        }
    }

    #[test]
    fn feature_round_trip() {
        let s = state();
        assert_eq!(AnesthesiaState::from_features(&s.features(), s.t), s);
    }

    #[test]
    fn targets_follow_feature_index() {
        let s = state();
        assert_eq!(s.targets(), [81.0, 36.4, 66.0, 12.0, 3.1, 2.9, 1.2, 1.1, 48.2]);
        for (i, &fi) in TARGET_FEATURE_INDEX.iter().enumerate() {
            assert_eq!(TARGET_NAMES[i], FEATURE_NAMES[fi]);
        }
    }

    #[test]
    fn profile_bounds() {
        assert!(PatientProfile::new(0, 0, 70.0, 170.0).is_err());
        assert!(PatientProfile::new(30, 2, 70.0, 170.0).is_err());
        assert!(PatientProfile::new(30, 0, 19.0, 170.0).is_err());
        assert!(PatientProfile::new(30, 0, 70.0, 240.0).is_err());
        assert!(PatientProfile::new(30, 0, f64::NAN, 170.0).is_err());
    }

    #[test]
    fn state_validation() {
        let mut s = state();
        assert!(s.validate().is_ok());
        s.bis = 101.0;
        assert!(s.validate().is_err());
        let mut s = state();
        s.rftn_ce = -0.1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn track_validation() {
        let ok = TrajectoryTrack::new("c", Indicator::Hr, vec![(0.0, 1.0), (2.0, 1.0)]);
        assert!(ok.validate().is_ok());
        let bad = TrajectoryTrack::new("c", Indicator::Hr, vec![(0.0, 1.0), (0.0, 1.0)]);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn indicator_names_parse() {
        for ind in Indicator::ALL {
            assert_eq!(Indicator::parse(ind.name()), Some(ind));
        }
        assert_eq!(Indicator::parse("spo2"), None);
    }
}
