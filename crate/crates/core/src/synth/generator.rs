//! Per-case simulation and dataset assembly.
//!
//! Each case is simulated on a one-second clock. The behavior policy decides a
//! dose every 30 s from the BIS on the monitor; every indicator is recorded by
//! its virtual device at its own cadence, starting after a per-track offset.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::behavior::{BehaviorConfig, BehaviorPolicy};
use super::pd::{bis_lag_step, pd_bis, PdParams};
use super::pk::{pk_step, Drug, PkAmounts, PkParams};
use crate::error::{Error, Result};
use crate::io;
use crate::mg::{DRUG_MG_PER_ML, N_DRUGS};
use crate::types::{Indicator, PatientProfile, TrajectoryTrack};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub age: (u32, u32),
    pub weight: (f64, f64),
    pub height: (f64, f64),
    pub male_fraction: f64,
    /// Inclusive range of simulated 30 s steps per case.
    pub duration_steps: (usize, usize),
    /// Per-case PK parameter spread (fraction); 0 disables it.
    pub pk_spread: f64,
    /// Per-case Ce50 spread (fraction); 0 disables it.
    pub pd_spread: f64,
    pub pd: PdParams,
    pub behavior: BehaviorConfig,
    /// Stationary standard deviation of the AR(1) BIS measurement noise.
    pub bis_noise_sd: f64,
    /// AR(1) coefficient of the BIS noise per second.
    pub bis_noise_ar: f64,
    /// Stationary noise sd for MBP, BT, HR, RR.
    pub vital_noise_sd: [f64; 4],
    pub vital_noise_ar: f64,
    /// First-order lag of MBP, HR, RR toward their drug-depressed setpoints (min).
    pub vital_tau_min: f64,
    /// Lag of body temperature (min).
    pub bt_tau_min: f64,
    /// Track start offsets are drawn uniformly from whole seconds in [0, max].
    pub max_start_offset_s: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            age: (20, 80),
            weight: (50.0, 100.0),
            height: (150.0, 190.0),
            male_fraction: 0.5,
            duration_steps: (150, 400),
            pk_spread: 0.2,
            pd_spread: 0.3,
            pd: PdParams::default(),
            behavior: BehaviorConfig::default(),
            bis_noise_sd: 2.0,
            bis_noise_ar: 0.998,
            vital_noise_sd: [2.0, 0.03, 1.5, 0.4],
            vital_noise_ar: 0.998,
            vital_tau_min: 2.0,
            bt_tau_min: 30.0,
            max_start_offset_s: 60,
        }
    }
}

impl SynthConfig {
    /// No per-case perturbation and no measurement noise: data follow the
    /// population model exactly.
    pub fn noiseless(mut self) -> Self {
        self.pk_spread = 0.0;
        self.pd_spread = 0.0;
        self.bis_noise_sd = 0.0;
        self.vital_noise_sd = [0.0; 4];
        self.behavior.noise_scale = 0.0;
        self.behavior.maintenance_spread = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.duration_steps;
        if lo > hi || lo == 0 {
            return Err(Error::config("duration_steps must be a non-empty range of positive steps"));
        }
        if self.age.0 > self.age.1 || self.weight.0 > self.weight.1 || self.height.0 > self.height.1 {
            return Err(Error::config("profile ranges must satisfy min <= max"));
        }
        if !(0.0..1.0).contains(&self.pk_spread) || !(0.0..1.0).contains(&self.pd_spread) {
            return Err(Error::config("parameter spreads must lie in [0, 1)"));
        }
        self.pd.validate()
    }

    fn sample_profile<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PatientProfile> {
        let age = rng.random_range(self.age.0..=self.age.1);
        let sex = u8::from(rng.random::<f64>() < self.male_fraction);
        let mut uniform = |(a, b): (f64, f64)| a + (b - a) * rng.random::<f64>();
        let weight = uniform(self.weight);
        let height = uniform(self.height);
        PatientProfile::new(age, sex, weight, height)
    }
}

/// Baseline vitals of a patient before any drug.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VitalBaseline {
    pub mbp: f64,
    pub bt: f64,
    pub hr: f64,
    pub rr: f64,
}

/// Everything drawn for one case, recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMeta {
    pub case_id: String,
    pub seed: u64,
    pub profile: PatientProfile,
    pub duration_steps: usize,
    pub pk_ppf: PkParams,
    pub pk_rftn: PkParams,
    pub pd: PdParams,
    pub vitals: VitalBaseline,
    pub policy: BehaviorPolicy,
    pub start_offsets_s: BTreeMap<Indicator, u32>,
}

#[derive(Debug, Clone)]
pub struct GeneratedCase {
    pub meta: CaseMeta,
    pub tracks: Vec<TrajectoryTrack>,
}

/// Per-second ground truth of a simulated case.
#[derive(Debug, Clone, Default)]
pub struct Simulation {
    /// Index = second. Values as recorded by the devices (noise included).
    pub series: BTreeMap<Indicator, Vec<f64>>,
    /// Volume (mL) per drug delivered during each 30 s decision block.
    pub block_volumes: Vec<[f64; N_DRUGS]>,
    /// Compartment state at the start of every 30 s block.
    pub block_amounts: Vec<[PkAmounts; N_DRUGS]>,
}

struct Ar1 {
    coef: f64,
    innovation_sd: f64,
    value: f64,
}

impl Ar1 {
    fn new<R: Rng + ?Sized>(sd: f64, coef: f64, rng: &mut R) -> Self {
        let z: f64 = rng.sample(StandardNormal);
        Self {
            coef,
            innovation_sd: sd * (1.0 - coef * coef).sqrt(),
            value: sd * z,
        }
    }

    fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.value = self.coef * self.value + self.innovation_sd * z;
        self.value
    }
}

/// Run the patient model for `total_s` seconds under `policy`.
#[allow(clippy::too_many_arguments)]
pub fn simulate<R: Rng + ?Sized>(
    pk: &[PkParams; N_DRUGS],
    pd: &PdParams,
    vitals: &VitalBaseline,
    policy: &BehaviorPolicy,
    total_s: usize,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Result<Simulation> {
    let mut sim = Simulation::default();
    for ind in Indicator::ALL {
        sim.series.insert(ind, Vec::with_capacity(total_s + 1));
    }
    let mut amounts = [PkAmounts::default(); N_DRUGS];
    let mut cum_ml = [0.0; N_DRUGS];
    let mut block = [0.0; N_DRUGS];
    let mut v = *vitals;
    let mut policy = policy.clone();
    let mut bis_noise = Ar1::new(cfg.bis_noise_sd, cfg.bis_noise_ar, rng);
    let mut vital_noise: Vec<Ar1> = cfg
        .vital_noise_sd
        .iter()
        .map(|&sd| Ar1::new(sd, cfg.vital_noise_ar, rng))
        .collect();
    let mut bis_true = pd_bis(0.0, 0.0, pd);
    let fast = 1.0 / (cfg.vital_tau_min * 60.0);
    let slow = 1.0 / (cfg.bt_tau_min * 60.0);

    for s in 0..=total_s {
        let cp = [amounts[0].cp(&pk[0]), amounts[1].cp(&pk[1])];
        let ce = [amounts[0].ce, amounts[1].ce];
        let bis = (bis_true + bis_noise.next(rng)).clamp(0.0, 100.0);
        let noise: Vec<f64> = vital_noise.iter_mut().map(|n| n.next(rng)).collect();
        let push = |sim: &mut Simulation, ind, x| sim.series.get_mut(&ind).unwrap().push(x);
        push(&mut sim, Indicator::Bis, bis);
        push(&mut sim, Indicator::Mbp, v.mbp + noise[0]);
        push(&mut sim, Indicator::Bt, v.bt + noise[1]);
        push(&mut sim, Indicator::Hr, v.hr + noise[2]);
        push(&mut sim, Indicator::Rr, (v.rr + noise[3]).max(1.0));
        push(&mut sim, Indicator::PpfCp, cp[0]);
        push(&mut sim, Indicator::PpfCe, ce[0]);
        push(&mut sim, Indicator::RftnCp, cp[1]);
        push(&mut sim, Indicator::RftnCe, ce[1]);
        push(&mut sim, Indicator::PpfVol, cum_ml[0]);
        push(&mut sim, Indicator::RftnVol, cum_ml[1]);
        if s == total_s {
            break;
        }

        if s % 30 == 0 {
            block = policy.volumes(s / 30, bis, rng);
            sim.block_volumes.push(block);
            sim.block_amounts.push(amounts);
        }
        for d in 0..N_DRUGS {
            let ml = block[d] / 30.0;
            amounts[d] = pk_step(amounts[d], &pk[d], ml * DRUG_MG_PER_ML, 1.0)?;
            cum_ml[d] += ml;
        }
        bis_true = bis_lag_step(bis_true, pd_bis(amounts[0].ce, amounts[1].ce, pd), 1.0, pd);

        // hemodynamics follow hypnotic depth, plus the opioid's own depression
        let depth = pd.e0 - bis_true;
        let mbp_set = vitals.mbp - 0.35 * depth - 1.0 * ce[1];
        let hr_set = vitals.hr - 0.12 * depth - 1.5 * ce[1];
        let rr_set = (vitals.rr - 0.05 * depth - 0.5 * ce[1]).max(6.0);
        let bt_set = vitals.bt - 0.15 * ce[0];
        v.mbp += fast * (mbp_set - v.mbp);
        v.hr += fast * (hr_set - v.hr);
        v.rr += fast * (rr_set - v.rr);
        v.bt += slow * (bt_set - v.bt);
    }
    Ok(sim)
}

/// Simulate one case and cut its device tracks.
pub fn generate_case(
    case_id: &str,
    profile: PatientProfile,
    duration_steps: usize,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<GeneratedCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = BehaviorPolicy::for_patient(&cfg.behavior, profile.weight, &mut rng);
    generate_case_with_policy(case_id, profile, &policy, duration_steps, seed, cfg)
}

pub fn generate_case_with_policy(
    case_id: &str,
    profile: PatientProfile,
    policy: &BehaviorPolicy,
    duration_steps: usize,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<GeneratedCase> {
    cfg.validate()?;
    // a separate stream from the one that drew the policy
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let pk = [
        PkParams::population(Drug::Propofol, &profile).perturbed(cfg.pk_spread, &mut rng),
        PkParams::population(Drug::Remifentanil, &profile).perturbed(cfg.pk_spread, &mut rng),
    ];
    let mut pd = cfg.pd;
    pd.ce50_ppf *= 1.0 + cfg.pd_spread * (2.0 * rng.random::<f64>() - 1.0);
    pd.ce50_rftn *= 1.0 + cfg.pd_spread * (2.0 * rng.random::<f64>() - 1.0);
    let mut normal = |mean: f64, sd: f64| mean + sd * rng.sample::<f64, _>(StandardNormal);
    let vitals = VitalBaseline {
        mbp: normal(88.0, 8.0),
        bt: normal(36.8, 0.25),
        hr: normal(75.0, 8.0),
        rr: normal(14.0, 1.5),
    };
    let offsets: BTreeMap<Indicator, u32> = Indicator::ALL
        .iter()
        .map(|&ind| (ind, rng.random_range(0..=cfg.max_start_offset_s)))
        .collect();
    let total_s = (duration_steps + 4) * 30;
    let sim = simulate(&pk, &pd, &vitals, policy, total_s, cfg, &mut rng)?;

    let tracks = Indicator::ALL
        .iter()
        .map(|&ind| {
            let start = offsets[&ind] as usize;
            let step = ind.cadence_s() as usize;
            let series = &sim.series[&ind];
            let samples = (start..=total_s)
                .step_by(step)
                .map(|s| (s as f64, series[s]))
                .collect();
            TrajectoryTrack::new(case_id, ind, samples)
        })
        .collect();

    Ok(GeneratedCase {
        meta: CaseMeta {
            case_id: case_id.to_string(),
            seed,
            profile,
            duration_steps,
            pk_ppf: pk[0],
            pk_rftn: pk[1],
            pd,
            vitals,
            policy: policy.clone(),
            start_offsets_s: offsets,
        },
        tracks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub n_cases: usize,
    pub config: SynthConfig,
    pub cases: Vec<CaseMeta>,
}

pub fn case_id(i: usize) -> String {
    format!("case_{i:04}")
}

/// Generate `n_cases` independent cases in memory. Every case owns a seed
/// drawn sequentially from the master seed, so generation order does not
/// affect the output.
pub fn generate_cases(n_cases: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<GeneratedCase>> {
    if n_cases == 0 {
        return Err(Error::config("n_cases must be at least 1"));
    }
    cfg.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let plan: Vec<(String, u64)> = (0..n_cases).map(|i| (case_id(i), master.next_u64())).collect();
    plan.into_par_iter()
        .map(|(id, case_seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(case_seed.wrapping_add(1));
            let profile = cfg.sample_profile(&mut rng)?;
            let steps = rng.random_range(cfg.duration_steps.0..=cfg.duration_steps.1);
            generate_case(&id, profile, steps, case_seed, cfg)
        })
        .collect()
}

pub fn manifest(cases: &[GeneratedCase], seed: u64, cfg: &SynthConfig) -> Manifest {
    Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed,
        n_cases: cases.len(),
        config: cfg.clone(),
        cases: cases.iter().map(|c| c.meta.clone()).collect(),
    }
}

/// Layout: `tracks/<case>__<indicator>.csv`, `profiles.csv`, `manifest.json`.
pub fn write_dataset(dir: &Path, cases: &[GeneratedCase], seed: u64, cfg: &SynthConfig) -> Result<Manifest> {
    let tracks_dir = dir.join("tracks");
    fs::create_dir_all(&tracks_dir)?;
    cases.par_iter().try_for_each(|case| -> Result<()> {
        for tr in &case.tracks {
            let path = tracks_dir.join(format!("{}__{}.csv", tr.case_id, tr.indicator));
            io::write_tracks(BufWriter::new(fs::File::create(path)?), std::slice::from_ref(tr))?;
        }
        Ok(())
    })?;
    let profiles: Vec<(String, PatientProfile)> = cases
        .iter()
        .map(|c| (c.meta.case_id.clone(), c.meta.profile))
        .collect();
    io::write_profiles(BufWriter::new(fs::File::create(dir.join("profiles.csv"))?), &profiles)?;
    let m = manifest(cases, seed, cfg);
    io::write_json(&dir.join("manifest.json"), &m)?;
    Ok(m)
}

pub fn generate_dataset(dir: &Path, n_cases: usize, seed: u64, cfg: &SynthConfig) -> Result<Manifest> {
    let cases = generate_cases(n_cases, seed, cfg)?;
    write_dataset(dir, &cases, seed, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> PatientProfile {
        PatientProfile::new(50, 1, 70.0, 175.0).unwrap()
    }

    #[test]
    fn track_shapes() {
        let cfg = SynthConfig::default();
        let case = generate_case("c", profile(), 150, 11, &cfg).unwrap();
        assert_eq!(case.tracks.len(), 11);
        for tr in &case.tracks {
            tr.validate().unwrap();
            let off = case.meta.start_offsets_s[&tr.indicator] as f64;
            assert!(off <= 60.0);
            assert_eq!(tr.start_time(), Some(off));
            let dt = tr.samples[1].0 - tr.samples[0].0;
            assert_eq!(dt, tr.indicator.cadence_s());
        }
    }

    #[test]
    fn same_seed_same_tracks() {
        let cfg = SynthConfig::default();
        let a = generate_case("c", profile(), 130, 5, &cfg).unwrap();
        let b = generate_case("c", profile(), 130, 5, &cfg).unwrap();
        assert_eq!(a.tracks, b.tracks);
        let c = generate_case("c", profile(), 130, 6, &cfg).unwrap();
        assert_ne!(a.tracks, c.tracks);
    }

    #[test]
    fn cumulative_volumes_non_decreasing() {
        let case = generate_case("c", profile(), 200, 9, &SynthConfig::default()).unwrap();
        for tr in case.tracks.iter().filter(|t| matches!(t.indicator, Indicator::PpfVol | Indicator::RftnVol)) {
            assert!(tr.samples.windows(2).all(|w| w[1].1 >= w[0].1));
        }
    }

    #[test]
    fn zero_dose_keeps_bis_near_baseline() {
        let cfg = SynthConfig::default();
        let case =
            generate_case_with_policy("c", profile(), &BehaviorPolicy::zero(), 150, 3, &cfg).unwrap();
        let bis = case.tracks.iter().find(|t| t.indicator == Indicator::Bis).unwrap();
        // five stationary standard deviations around E0
        let band = 5.0 * cfg.bis_noise_sd;
        assert!(bis.values().all(|v| (v - cfg.pd.e0).abs() <= band));
    }

    #[test]
    fn bolus_then_maintain_induces_within_ten_minutes() {
        let cfg = SynthConfig::default();
        let case = generate_case("c", profile(), 150, 21, &cfg).unwrap();
        let bis = case.tracks.iter().find(|t| t.indicator == Indicator::Bis).unwrap();
        let first_below = bis.samples.iter().find(|s| s.1 < 60.0).map(|s| s.0).unwrap();
        // realized for this seed: BIS crosses 60 about two minutes in
        assert!(first_below < 600.0, "first BIS < 60 at {first_below} s");
    }

    #[test]
    fn degenerate_ranges_give_identical_profiles() {
        let cfg = SynthConfig {
            age: (45, 45),
            weight: (72.0, 72.0),
            height: (170.0, 170.0),
            male_fraction: 1.0,
            duration_steps: (120, 120),
            ..Default::default()
        };
        let cases = generate_cases(4, 1, &cfg).unwrap();
        assert!(cases.iter().all(|c| c.meta.profile == cases[0].meta.profile));
    }

    #[test]
    fn zero_cases_rejected() {
        assert!(generate_cases(0, 1, &SynthConfig::default()).is_err());
    }
}
