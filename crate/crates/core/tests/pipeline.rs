use std::collections::BTreeMap;

use dosinglab::pipeline::{
    process_case, resample_track, run_dir, run_pipeline, split_dataset, PipelineConfig, RejectReason,
};
use dosinglab::synth::{generate_cases, generate_dataset, SynthConfig};
use dosinglab::types::{CaseRecord, Indicator, PatientProfile, TrajectoryTrack};
use proptest::prelude::*;

fn pipeline_input(n: usize, seed: u64) -> (BTreeMap<String, Vec<TrajectoryTrack>>, BTreeMap<String, PatientProfile>) {
    let cases = generate_cases(n, seed, &SynthConfig::default()).unwrap();
    let tracks = cases.iter().map(|c| (c.meta.case_id.clone(), c.tracks.clone())).collect();
    let profiles = cases.iter().map(|c| (c.meta.case_id.clone(), c.meta.profile)).collect();
    (tracks, profiles)
}

fn check_invariants(records: &[CaseRecord], cfg: &PipelineConfig) {
    for r in records {
        assert!((cfg.min_steps..=cfg.max_steps).contains(&r.len()), "{} has {} steps", r.case_id, r.len());
        assert!(r.start_time_s < 300.0);
        for (k, s) in r.steps.iter().enumerate() {
            assert_eq!(s.t, k, "{}: steps are not consecutive", r.case_id);
        }
        for tr in r.to_tracks() {
            for w in tr.samples.windows(2) {
                assert!((w[1].0 - w[0].0 - 30.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn retained_cases_satisfy_the_filters() {
    let (tracks, profiles) = pipeline_input(30, 4);
    let cfg = PipelineConfig::default();
    let (records, report) = run_pipeline(&tracks, &profiles, &cfg).unwrap();
    assert_eq!(report.input_cases, 30);
    assert_eq!(report.kept + report.rejections.len(), 30);
    assert!(report.kept > 0);
    check_invariants(&records, &cfg);
}

#[test]
fn idempotent_on_its_own_output() {
    let (tracks, profiles) = pipeline_input(20, 9);
    let cfg = PipelineConfig::default();
    let (first, _) = run_pipeline(&tracks, &profiles, &cfg).unwrap();
    let again: BTreeMap<_, _> = first.iter().map(|r| (r.case_id.clone(), r.to_tracks())).collect();
    let (second, report) = run_pipeline(&again, &profiles, &cfg).unwrap();
    assert_eq!(report.kept, first.len());
    assert_eq!(second, first);
}

#[test]
fn late_indicator_is_a_sync_failure() {
    let profile = PatientProfile::new(40, 0, 60.0, 165.0).unwrap();
    let tracks: Vec<TrajectoryTrack> = Indicator::ALL
        .iter()
        .map(|&ind| {
            let start = if ind == Indicator::Mbp { 40.0 } else { 0.0 };
            let samples = (0..200 * 30).map(|s| (start + s as f64, 50.0)).collect();
            TrajectoryTrack::new("late", ind, samples)
        })
        .collect();
    let rej = process_case("late", &tracks, Some(profile), &PipelineConfig::default()).unwrap_err();
    assert_eq!(rej.reason, RejectReason::SyncFail);

    // the same case with every device on time passes
    let on_time: Vec<TrajectoryTrack> = tracks
        .iter()
        .map(|t| {
            let shift = t.samples[0].0;
            TrajectoryTrack::new("late", t.indicator, t.samples.iter().map(|(s, v)| (s - shift, *v)).collect())
        })
        .collect();
    assert!(process_case("late", &on_time, Some(profile), &PipelineConfig::default()).is_ok());
}

#[test]
fn missing_profile_is_reported() {
    let (tracks, _) = pipeline_input(3, 1);
    let (records, report) = run_pipeline(&tracks, &BTreeMap::new(), &PipelineConfig::default()).unwrap();
    assert!(records.is_empty());
    assert_eq!(report.dropped.get(&RejectReason::MissingProfile), Some(&3));
}

#[test]
fn directory_run_is_reproducible_and_counts_corrupt_rows() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    generate_dataset(&raw, 6, 21, &SynthConfig::default()).unwrap();
    let bad = raw.join("tracks").join("extra.csv");
    std::fs::write(&bad, "case_id,indicator,time_s,value\ncase_0000,bis,oops,1\ncase_0000,nope,1,1\n").unwrap();

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let ra = run_dir(&raw, &a, &PipelineConfig::default()).unwrap();
    let rb = run_dir(&raw, &b, &PipelineConfig::default()).unwrap();
    assert_eq!(ra.warnings, 2);
    assert_eq!(ra, rb);
    let files = |d: &std::path::Path| -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<_> = std::fs::read_dir(d.join("records"))
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    assert_eq!(files(&a), files(&b));

    // re-running on its own output keeps the same cases
    let c = dir.path().join("c");
    let rc = run_dir(&a, &c, &PipelineConfig::default()).unwrap();
    assert_eq!(rc.kept, ra.kept);
    assert_eq!(files(&c), files(&a));
}

#[test]
fn split_is_four_to_one_and_disjoint() {
    let (tracks, profiles) = pipeline_input(40, 2);
    let (records, _) = run_pipeline(&tracks, &profiles, &PipelineConfig::default()).unwrap();
    let s = split_dataset(&records, 3).unwrap();
    assert_eq!(s.train.len() + s.test.len(), records.len());
    assert!(s.test.iter().all(|id| !s.train.contains(id)));
    assert_eq!(s, split_dataset(&records, 3).unwrap());
}

proptest! {
    #[test]
    fn resampled_grid_is_uniform(start in 0.0f64..500.0, n in 1usize..400, cadence in prop::sample::select(vec![1.0, 2.0])) {
        let tr = TrajectoryTrack::new("p", Indicator::Hr, (0..n).map(|i| (start + cadence * i as f64, i as f64)).collect());
        let r = resample_track(&tr, 30.0, false);
        let span = cadence * (n - 1) as f64;
        prop_assert_eq!(r.len(), (span / 30.0).floor() as usize + 1);
        for (k, (t, v)) in r.samples.iter().enumerate() {
            prop_assert!((t - (start + 30.0 * k as f64)).abs() < 1e-9);
            prop_assert_eq!(*v, (30.0 * k as f64 / cadence).round());
        }
    }
}
