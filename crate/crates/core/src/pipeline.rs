//! Raw device tracks to aligned 30 s case tables.
//!
//! Per case: resample every track onto its own 30 s grid, strip leading
//! invalid rows, align all devices on the first BIS sample, cut to the
//! shortest track and merge column-wise, then apply the case filters.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::types::{AnesthesiaState, CaseRecord, Indicator, PatientProfile, TrajectoryTrack};

/// Tolerance when matching sample times to grid times (s).
const TIME_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub interval_s: f64,
    /// Average all samples inside each grid window instead of decimating.
    pub averaging: bool,
    /// Other devices may start at most this long after the first BIS sample.
    pub sync_tolerance_s: f64,
    /// Cases whose raw BIS recording starts at or after this time are dropped.
    pub max_start_s: f64,
    pub min_steps: usize,
    pub max_steps: usize,
    /// Sanity bound on |value[t+1] - value[t]| per indicator.
    pub max_step_diff: BTreeMap<Indicator, f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let max_step_diff = Indicator::ALL
            .iter()
            .map(|&ind| {
                let bound = match ind {
                    Indicator::Bis | Indicator::Mbp | Indicator::Hr => 60.0,
                    Indicator::Bt => 2.0,
                    Indicator::Rr => 30.0,
                    Indicator::PpfCp | Indicator::PpfCe | Indicator::RftnCp | Indicator::RftnCe => 20.0,
                    Indicator::PpfVol | Indicator::RftnVol => 10.0,
                };
                (ind, bound)
            })
            .collect();
        Self {
            interval_s: 30.0,
            averaging: false,
            sync_tolerance_s: 30.0,
            max_start_s: 300.0,
            min_steps: 120,
            max_steps: 1000,
            max_step_diff,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.interval_s > 0.0) {
            return Err(Error::config("resampling interval must be positive"));
        }
        if self.min_steps > self.max_steps {
            return Err(Error::config("min_steps exceeds max_steps"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectReason {
    MissingTrack,
    MissingProfile,
    SyncFail,
    EmptyAfterAlign,
    StartTooLate,
    LengthOutOfRange,
    InvalidValue,
    DiffBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub case_id: String,
    pub reason: RejectReason,
    pub detail: String,
}

impl Rejection {
    fn new(case_id: &str, reason: RejectReason, detail: impl Into<String>) -> Self {
        Self {
            case_id: case_id.to_string(),
            reason,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub input_cases: usize,
    pub kept: usize,
    pub dropped: BTreeMap<RejectReason, usize>,
    /// Corrupt CSV rows skipped while reading.
    pub warnings: usize,
    pub rejections: Vec<Rejection>,
}

/// Put a track on a uniform grid `t0, t0 + interval, ...` anchored at its first sample.
///
/// Decimation takes the sample at each grid time (the last one at or before it
/// when the device skipped a beat), so a 2 s track keeps every 15th sample.
/// With `averaging` each grid point instead carries the mean of the samples in
/// `[t, t + interval)`.
pub fn resample_track(track: &TrajectoryTrack, interval_s: f64, averaging: bool) -> TrajectoryTrack {
    let mut out = TrajectoryTrack::new(track.case_id.clone(), track.indicator, Vec::new());
    let (Some(&(t0, _)), Some(&(t_end, _))) = (track.samples.first(), track.samples.last()) else {
        return out;
    };
    let n_grid = ((t_end - t0 + TIME_EPS) / interval_s).floor() as usize + 1;
    let mut cursor = 0;
    for k in 0..n_grid {
        let g = t0 + k as f64 * interval_s;
        if averaging {
            let start = cursor;
            while cursor < track.samples.len() && track.samples[cursor].0 < g + interval_s - TIME_EPS {
                cursor += 1;
            }
            let window = &track.samples[start..cursor];
            if window.is_empty() {
                // gap longer than a window: hold the previous grid value
                let prev = out.samples.last().map_or(track.samples[start].1, |s| s.1);
                out.samples.push((g, prev));
            } else {
                let mean = window.iter().map(|s| s.1).sum::<f64>() / window.len() as f64;
                out.samples.push((g, mean));
            }
        } else {
            while cursor + 1 < track.samples.len() && track.samples[cursor + 1].0 <= g + TIME_EPS {
                cursor += 1;
            }
            out.samples.push((g, track.samples[cursor].1));
        }
    }
    out
}

/// Drop the leading run of values <= 0, keeping a zero that directly precedes
/// the first positive value. A track with no positive value becomes empty.
pub fn clean_leading_invalid(track: &TrajectoryTrack) -> TrajectoryTrack {
    let samples = match track.samples.iter().position(|s| s.1 > 0.0) {
        None => Vec::new(),
        Some(i) => {
            let start = if i > 0 && track.samples[i - 1].1 == 0.0 { i - 1 } else { i };
            track.samples[start..].to_vec()
        }
    };
    TrajectoryTrack::new(track.case_id.clone(), track.indicator, samples)
}

/// Tracks aligned on the first BIS sample, in `Indicator::ALL` order.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedCase {
    pub case_id: String,
    /// Earliest BIS time before alignment.
    pub t_bis: f64,
    pub tracks: Vec<TrajectoryTrack>,
}

/// Anchor every track at the grid step nearest the earliest BIS time.
///
/// The case is accepted only if every device has started by `t_bis + tolerance`.
pub fn align_case(
    case_id: &str,
    tracks: &[TrajectoryTrack],
    interval_s: f64,
    tolerance_s: f64,
) -> std::result::Result<AlignedCase, Rejection> {
    let by_ind: BTreeMap<Indicator, &TrajectoryTrack> = tracks.iter().map(|t| (t.indicator, t)).collect();
    let missing: Vec<&str> = Indicator::ALL
        .iter()
        .filter(|i| !by_ind.contains_key(i))
        .map(|i| i.name())
        .collect();
    if !missing.is_empty() {
        return Err(Rejection::new(case_id, RejectReason::MissingTrack, missing.join(",")));
    }
    let t_bis = by_ind[&Indicator::Bis]
        .start_time()
        .ok_or_else(|| Rejection::new(case_id, RejectReason::EmptyAfterAlign, "no valid BIS samples"))?;
    let mut aligned = Vec::with_capacity(Indicator::ALL.len());
    for ind in Indicator::ALL {
        let tr = by_ind[&ind];
        let Some(start) = tr.start_time() else {
            return Err(Rejection::new(
                case_id,
                RejectReason::EmptyAfterAlign,
                format!("{ind} has no valid samples"),
            ));
        };
        if start > t_bis + tolerance_s + TIME_EPS {
            return Err(Rejection::new(
                case_id,
                RejectReason::SyncFail,
                format!("{ind} starts at {start} s, BIS at {t_bis} s"),
            ));
        }
        let cut = t_bis - interval_s / 2.0 - TIME_EPS;
        let samples = tr.samples.iter().copied().filter(|s| s.0 >= cut).collect();
        aligned.push(TrajectoryTrack::new(case_id, ind, samples));
    }
    Ok(AlignedCase {
        case_id: case_id.to_string(),
        t_bis,
        tracks: aligned,
    })
}

/// Cut all aligned tracks to the shortest one and join them by step index.
pub fn truncate_merge(aligned: &AlignedCase, profile: PatientProfile) -> std::result::Result<CaseRecord, Rejection> {
    let len = aligned.tracks.iter().map(|t| t.len()).min().unwrap_or(0);
    if len == 0 {
        return Err(Rejection::new(
            &aligned.case_id,
            RejectReason::EmptyAfterAlign,
            "shortest track is empty",
        ));
    }
    let steps = (0..len)
        .map(|t| {
            let mut s = AnesthesiaState::from_features(&[0.0; 15], t);
            s.profile = profile;
            for tr in &aligned.tracks {
                s.set_indicator(tr.indicator, tr.samples[t].1);
            }
            s
        })
        .collect();
    Ok(CaseRecord {
        case_id: aligned.case_id.clone(),
        profile,
        steps,
        start_time_s: aligned.t_bis,
    })
}

/// Why a merged record fails the case filters, if it does.
pub fn check_record(record: &CaseRecord, cfg: &PipelineConfig) -> Option<Rejection> {
    let id = &record.case_id;
    if record.start_time_s >= cfg.max_start_s {
        return Some(Rejection::new(
            id,
            RejectReason::StartTooLate,
            format!("BIS starts at {} s", record.start_time_s),
        ));
    }
    if record.len() < cfg.min_steps || record.len() > cfg.max_steps {
        return Some(Rejection::new(
            id,
            RejectReason::LengthOutOfRange,
            format!("{} steps", record.len()),
        ));
    }
    if let Some(e) = record.steps.iter().find_map(|s| s.validate().err()) {
        return Some(Rejection::new(id, RejectReason::InvalidValue, e.to_string()));
    }
    for (&ind, &bound) in &cfg.max_step_diff {
        if let Some(w) = record
            .steps
            .windows(2)
            .find(|w| (w[1].indicator(ind) - w[0].indicator(ind)).abs() > bound)
        {
            return Some(Rejection::new(
                id,
                RejectReason::DiffBound,
                format!("{ind} jumps by more than {bound} at step {}", w[1].t),
            ));
        }
    }
    None
}

/// Keep records that pass [`check_record`].
pub fn filter_cases(records: Vec<CaseRecord>, cfg: &PipelineConfig) -> (Vec<CaseRecord>, Vec<Rejection>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for r in records {
        match check_record(&r, cfg) {
            None => kept.push(r),
            Some(rej) => dropped.push(rej),
        }
    }
    (kept, dropped)
}

/// The whole per-case chain.
pub fn process_case(
    case_id: &str,
    tracks: &[TrajectoryTrack],
    profile: Option<PatientProfile>,
    cfg: &PipelineConfig,
) -> std::result::Result<CaseRecord, Rejection> {
    let profile = profile.ok_or_else(|| Rejection::new(case_id, RejectReason::MissingProfile, "no profile row"))?;
    let cleaned: Vec<TrajectoryTrack> = tracks
        .iter()
        .map(|t| clean_leading_invalid(&resample_track(t, cfg.interval_s, cfg.averaging)))
        .collect();
    let aligned = align_case(case_id, &cleaned, cfg.interval_s, cfg.sync_tolerance_s)?;
    let record = truncate_merge(&aligned, profile)?;
    match check_record(&record, cfg) {
        None => Ok(record),
        Some(rej) => Err(rej),
    }
}

/// Run every case; records come back sorted by case id.
pub fn run_pipeline(
    cases: &BTreeMap<String, Vec<TrajectoryTrack>>,
    profiles: &BTreeMap<String, PatientProfile>,
    cfg: &PipelineConfig,
) -> Result<(Vec<CaseRecord>, PipelineReport)> {
    cfg.validate()?;
    let results: Vec<_> = cases
        .par_iter()
        .map(|(id, tracks)| process_case(id, tracks, profiles.get(id).copied(), cfg))
        .collect();
    let mut report = PipelineReport {
        input_cases: cases.len(),
        ..Default::default()
    };
    let mut records = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(rej) => {
                log::info!("dropping {}: {:?} ({})", rej.case_id, rej.reason, rej.detail);
                *report.dropped.entry(rej.reason).or_default() += 1;
                report.rejections.push(rej);
            }
        }
    }
    report.kept = records.len();
    Ok((records, report))
}

/// Group a track directory's files (`<case>__<indicator>.csv`, any split of
/// rows across files is accepted) by case id. Returns the skipped-row count.
pub fn read_track_dir(dir: &Path) -> Result<(BTreeMap<String, Vec<TrajectoryTrack>>, usize)> {
    let mut cases: BTreeMap<String, Vec<TrajectoryTrack>> = BTreeMap::new();
    let mut warnings = 0;
    for path in io::list_files(dir, "csv")? {
        let read = io::read_tracks(fs::File::open(&path)?, &path.display().to_string())?;
        warnings += read.warnings;
        for tr in read.tracks {
            cases.entry(tr.case_id.clone()).or_default().push(tr);
        }
    }
    // merge duplicate (case, indicator) pieces coming from different files
    for tracks in cases.values_mut() {
        tracks.sort_by_key(|t| t.indicator);
        let mut merged: Vec<TrajectoryTrack> = Vec::with_capacity(tracks.len());
        for tr in tracks.drain(..) {
            match merged.last_mut() {
                Some(last) if last.indicator == tr.indicator => {
                    last.samples.extend(tr.samples);
                    last.samples.sort_by(|a, b| a.0.total_cmp(&b.0));
                    last.samples.dedup_by(|a, b| a.0 == b.0);
                }
                _ => merged.push(tr),
            }
        }
        *tracks = merged;
    }
    Ok((cases, warnings))
}

/// Raw dataset directory (`tracks/` + `profiles.csv`) or a directory of
/// previously produced case tables, which are re-split into tracks.
pub fn load_input(dir: &Path) -> Result<(BTreeMap<String, Vec<TrajectoryTrack>>, BTreeMap<String, PatientProfile>, usize)> {
    let tracks_dir = dir.join("tracks");
    if tracks_dir.is_dir() {
        let (cases, warnings) = read_track_dir(&tracks_dir)?;
        let profiles_path = dir.join("profiles.csv");
        let profiles = if profiles_path.is_file() {
            io::read_profiles(fs::File::open(profiles_path)?)?
        } else {
            BTreeMap::new()
        };
        return Ok((cases, profiles, warnings));
    }
    let records_dir = if dir.join("records").is_dir() { dir.join("records") } else { dir.to_path_buf() };
    let records = io::read_records_dir(&records_dir)?;
    if records.is_empty() {
        return Err(Error::data(format!("{} holds neither tracks/ nor case tables", dir.display())));
    }
    let profiles = records.iter().map(|r| (r.case_id.clone(), r.profile)).collect();
    let cases = records.iter().map(|r| (r.case_id.clone(), r.to_tracks())).collect();
    Ok((cases, profiles, 0))
}

/// Read `input`, write `out/records/<case>.csv` and `out/pipeline_report.json`.
pub fn run_dir(input: &Path, out: &Path, cfg: &PipelineConfig) -> Result<PipelineReport> {
    let (cases, profiles, warnings) = load_input(input)?;
    let (records, mut report) = run_pipeline(&cases, &profiles, cfg)?;
    report.warnings = warnings;
    let records_dir = out.join("records");
    if records_dir.is_dir() {
        for f in io::list_files(&records_dir, "csv")? {
            fs::remove_file(f)?;
        }
    }
    io::write_records_dir(&records_dir, &records)?;
    io::write_json(&out.join("pipeline_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Case-level 4:1 split after a seeded shuffle.
pub fn split_dataset(records: &[CaseRecord], seed: u64) -> Result<Split> {
    if records.len() < 5 {
        return Err(Error::config(format!(
            "need at least 5 cases to split, got {}",
            records.len()
        )));
    }
    let mut ids: Vec<String> = records.iter().map(|r| r.case_id.clone()).collect();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((ids.len() as f64 / 5.0).round() as usize).max(1);
    let test = ids.split_off(ids.len() - n_test);
    let mut train = ids;
    train.sort();
    let mut test = test;
    test.sort();
    Ok(Split { seed, train, test })
}

/// Partition records by a split; ids missing from `records` are a data error.
pub fn apply_split(records: &[CaseRecord], split: &Split) -> Result<(Vec<CaseRecord>, Vec<CaseRecord>)> {
    let by_id: BTreeMap<&str, &CaseRecord> = records.iter().map(|r| (r.case_id.as_str(), r)).collect();
    let pick = |ids: &[String]| -> Result<Vec<CaseRecord>> {
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|r| (*r).clone())
                    .ok_or_else(|| Error::data(format!("split names unknown case {id}")))
            })
            .collect()
    };
    Ok((pick(&split.train)?, pick(&split.test)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(ind: Indicator, samples: Vec<(f64, f64)>) -> TrajectoryTrack {
        TrajectoryTrack::new("c", ind, samples)
    }

    fn values(t: &TrajectoryTrack) -> Vec<f64> {
        t.values().collect()
    }

    fn times(t: &TrajectoryTrack) -> Vec<f64> {
        t.samples.iter().map(|s| s.0).collect()
    }

    #[test]
    fn resample_one_second_track() {
        let tr = track(Indicator::Bis, (0..=120).map(|s| (s as f64, s as f64)).collect());
        let r = resample_track(&tr, 30.0, false);
        assert_eq!(times(&r), vec![0.0, 30.0, 60.0, 90.0, 120.0]);
        assert_eq!(values(&r), vec![0.0, 30.0, 60.0, 90.0, 120.0]);
    }

    #[test]
    fn resample_two_second_track_takes_every_fifteenth() {
        let tr = track(Indicator::Hr, (0..61).map(|i| (2.0 * i as f64, i as f64)).collect());
        let r = resample_track(&tr, 30.0, false);
        assert_eq!(times(&r), vec![0.0, 30.0, 60.0, 90.0, 120.0]);
        assert_eq!(values(&r), vec![0.0, 15.0, 30.0, 45.0, 60.0]);
    }

    #[test]
    fn resample_averaging_variant() {
        let tr = track(Indicator::Hr, (0..30).map(|i| (2.0 * i as f64, i as f64)).collect());
        let r = resample_track(&tr, 30.0, true);
        // windows hold samples 0..15 and 15..30
        assert_eq!(values(&r), vec![7.0, 22.0]);
    }

    #[test]
    fn resample_empty() {
        assert!(resample_track(&track(Indicator::Bis, vec![]), 30.0, false).is_empty());
    }

    #[test]
    fn clean_examples() {
        let mk = |v: &[f64]| track(Indicator::Bis, v.iter().enumerate().map(|(i, &x)| (i as f64, x)).collect());
        assert_eq!(values(&clean_leading_invalid(&mk(&[0.0, 0.0, 0.0, 5.0, 6.0]))), vec![0.0, 5.0, 6.0]);
        assert_eq!(values(&clean_leading_invalid(&mk(&[3.0, 4.0, 5.0]))), vec![3.0, 4.0, 5.0]);
        assert!(clean_leading_invalid(&mk(&[-1.0, -1.0])).is_empty());
        assert_eq!(values(&clean_leading_invalid(&mk(&[0.0, -1.0, 5.0]))), vec![5.0]);
    }

    fn case_with_starts(bis_start: f64, hr_start: f64) -> Vec<TrajectoryTrack> {
        Indicator::ALL
            .iter()
            .map(|&ind| {
                let start = match ind {
                    Indicator::Bis => bis_start,
                    Indicator::Hr => hr_start,
                    _ => bis_start,
                };
                track(ind, (0..10).map(|k| (start + 30.0 * k as f64, 1.0 + k as f64)).collect())
            })
            .collect()
    }

    #[test]
    fn alignment_rules() {
        let a = align_case("c", &case_with_starts(100.0, 80.0), 30.0, 30.0).unwrap();
        let hr = &a.tracks[Indicator::ALL.iter().position(|&i| i == Indicator::Hr).unwrap()];
        // HR grid 80, 110, ...: 110 is the step nearest the BIS start
        assert_eq!(hr.start_time(), Some(110.0));
        assert_eq!(a.t_bis, 100.0);

        assert!(align_case("c", &case_with_starts(100.0, 120.0), 30.0, 30.0).is_ok());
        assert!(align_case("c", &case_with_starts(100.0, 130.0), 30.0, 30.0).is_ok());
        let rej = align_case("c", &case_with_starts(100.0, 140.0), 30.0, 30.0).unwrap_err();
        assert_eq!(rej.reason, RejectReason::SyncFail);

        let mut missing = case_with_starts(0.0, 0.0);
        missing.pop();
        assert_eq!(align_case("c", &missing, 30.0, 30.0).unwrap_err().reason, RejectReason::MissingTrack);
    }

    #[test]
    fn early_samples_are_cut_to_nearest_grid_step() {
        let a = align_case("c", &case_with_starts(100.0, 10.0), 30.0, 30.0).unwrap();
        let hr = a.tracks.iter().find(|t| t.indicator == Indicator::Hr).unwrap();
        // HR grid 10, 40, 70, 100: 100 is the first step at or after 85
        assert_eq!(hr.start_time(), Some(100.0));
    }

    #[test]
    fn truncate_to_shortest() {
        let p = PatientProfile::new(40, 1, 70.0, 170.0).unwrap();
        let mut tracks = case_with_starts(0.0, 0.0);
        tracks[3].samples.truncate(6);
        let a = align_case("c", &tracks, 30.0, 30.0).unwrap();
        let rec = truncate_merge(&a, p).unwrap();
        assert_eq!(rec.len(), 6);
        assert!(rec.steps.iter().enumerate().all(|(i, s)| s.t == i && s.profile == p));

        let mut tracks = case_with_starts(0.0, 0.0);
        tracks[2].samples.clear();
        assert!(align_case("c", &tracks, 30.0, 30.0).is_err());
    }

    fn record(start: f64, len: usize) -> CaseRecord {
        let p = PatientProfile::new(40, 1, 70.0, 170.0).unwrap();
        let steps = (0..len)
            .map(|t| {
                let mut s = AnesthesiaState::from_features(&[0.0; 15], t);
                s.profile = p;
                s.bis = 50.0;
                s
            })
            .collect();
        CaseRecord {
            case_id: format!("r{start}_{len}"),
            profile: p,
            steps,
            start_time_s: start,
        }
    }

    #[test]
    fn filter_rules() {
        let cfg = PipelineConfig::default();
        let (kept, dropped) = filter_cases(vec![record(250.0, 500), record(400.0, 500), record(0.0, 110)], &cfg);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].start_time_s, 250.0);
        let reasons: Vec<_> = dropped.iter().map(|r| r.reason).collect();
        assert_eq!(reasons, vec![RejectReason::StartTooLate, RejectReason::LengthOutOfRange]);
    }

    #[test]
    fn diff_bound_rejects_jumps() {
        let mut r = record(0.0, 150);
        r.steps[70].bis = 100.0;
        r.steps[71].bis = 20.0;
        let rej = check_record(&r, &PipelineConfig::default()).unwrap();
        assert_eq!(rej.reason, RejectReason::DiffBound);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let recs: Vec<CaseRecord> = (0..100).map(|i| record(i as f64, 120)).collect();
        let s = split_dataset(&recs, 3).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (80, 20));
        assert_eq!(s, split_dataset(&recs, 3).unwrap());
        assert_ne!(s, split_dataset(&recs, 4).unwrap());
        let five: Vec<CaseRecord> = (0..5).map(|i| record(i as f64, 120)).collect();
        let s5 = split_dataset(&five, 0).unwrap();
        assert_eq!((s5.train.len(), s5.test.len()), (4, 1));
        assert!(split_dataset(&five[..4], 0).is_err());
        let (train, test) = apply_split(&recs, &s).unwrap();
        assert!(test.iter().all(|t| !train.iter().any(|r| r.case_id == t.case_id)));
    }
}
