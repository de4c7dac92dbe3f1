//! CSV interchange formats for raw tracks, patient profiles and case records.
//!
//! Floats are written with Rust's shortest round-trip formatting so that
//! reading a file back reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::types::{AnesthesiaState, CaseRecord, Indicator, PatientProfile, TrajectoryTrack};

pub const TRACK_HEADER: [&str; 4] = ["case_id", "indicator", "time_s", "value"];

pub const RECORD_HEADER: [&str; 17] = [
    "case_id", "t_step", "age", "sex", "weight", "height", "bis", "mbp", "bt", "hr", "rr",
    "ppf_cp", "ppf_ce", "rftn_cp", "rftn_ce", "ppf_vol", "rftn_vol",
];

pub const PROFILE_HEADER: [&str; 5] = ["case_id", "age", "sex", "weight", "height"];

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn check_header(found: &csv::StringRecord, expected: &[&str], what: &str) -> Result<()> {
    if found.iter().ne(expected.iter().copied()) {
        return Err(Error::data(format!(
            "{what}: expected header `{}`, found `{}`",
            expected.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

pub fn write_tracks<W: Write>(out: W, tracks: &[TrajectoryTrack]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACK_HEADER)?;
    for tr in tracks {
        for &(t, v) in &tr.samples {
            w.write_record([
                tr.case_id.as_str(),
                tr.indicator.name(),
                &fmt_f64(t),
                &fmt_f64(v),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Tracks parsed from CSV plus the number of rows that were skipped as corrupt.
#[derive(Debug, Default)]
pub struct TrackRead {
    pub tracks: Vec<TrajectoryTrack>,
    pub warnings: usize,
}

/// Read every track in a CSV stream. Rows that fail to parse are skipped and
/// counted; samples are grouped per (case, indicator) in file order.
pub fn read_tracks<R: Read>(input: R, origin: &str) -> Result<TrackRead> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    check_header(r.headers()?, &TRACK_HEADER, origin)?;
    let mut grouped: BTreeMap<(String, Indicator), Vec<(f64, f64)>> = BTreeMap::new();
    let mut warnings = 0;
    for (line, row) in r.records().enumerate() {
        let parsed = row.ok().and_then(|row| {
            if row.len() != 4 {
                return None;
            }
            let ind = Indicator::parse(&row[1])?;
            let t: f64 = row[2].parse().ok()?;
            let v: f64 = row[3].parse().ok()?;
            (t.is_finite() && v.is_finite()).then(|| (row[0].to_string(), ind, t, v))
        });
        match parsed {
            Some((case, ind, t, v)) => grouped.entry((case, ind)).or_default().push((t, v)),
            None => {
                warnings += 1;
                log::warn!("{origin}: skipping corrupt row {}", line + 2);
            }
        }
    }
    let tracks = grouped
        .into_iter()
        .map(|((case, ind), mut samples)| {
            samples.sort_by(|a, b| a.0.total_cmp(&b.0));
            samples.dedup_by(|b, a| b.0 == a.0);
            TrajectoryTrack::new(case, ind, samples)
        })
        .collect();
    Ok(TrackRead { tracks, warnings })
}

pub fn write_profiles<W: Write>(out: W, profiles: &[(String, PatientProfile)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PROFILE_HEADER)?;
    for (id, p) in profiles {
        w.write_record([
            id.as_str(),
            &p.age.to_string(),
            &p.sex.to_string(),
            &fmt_f64(p.weight),
            &fmt_f64(p.height),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_profiles<R: Read>(input: R) -> Result<BTreeMap<String, PatientProfile>> {
    let mut r = csv::Reader::from_reader(input);
    check_header(r.headers()?, &PROFILE_HEADER, "profiles")?;
    let mut out = BTreeMap::new();
    for row in r.records() {
        let row = row?;
        let bad = || Error::data(format!("bad profile row: {row:?}"));
        let p = PatientProfile {
            age: row[1].parse().map_err(|_| bad())?,
            sex: row[2].parse().map_err(|_| bad())?,
            weight: row[3].parse().map_err(|_| bad())?,
            height: row[4].parse().map_err(|_| bad())?,
        };
        p.validate()?;
        out.insert(row[0].to_string(), p);
    }
    Ok(out)
}

pub fn write_record<W: Write>(out: W, record: &CaseRecord) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_HEADER)?;
    for s in &record.steps {
        let p = &s.profile;
        let mut row = vec![
            record.case_id.clone(),
            s.t.to_string(),
            p.age.to_string(),
            p.sex.to_string(),
        ];
        row.extend(
            [
                p.weight, p.height, s.bis, s.mbp, s.bt, s.hr, s.rr, s.ppf_cp, s.ppf_ce, s.rftn_cp,
                s.rftn_ce, s.ppf_vol, s.rftn_vol,
            ]
            .into_iter()
            .map(fmt_f64),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_record<R: Read>(input: R, origin: &str) -> Result<CaseRecord> {
    let mut r = csv::Reader::from_reader(input);
    check_header(r.headers()?, &RECORD_HEADER, origin)?;
    let mut case_id = None;
    let mut steps = Vec::new();
    for row in r.records() {
        let row = row?;
        let bad = || Error::data(format!("{origin}: bad record row {row:?}"));
        let f = |i: usize| -> Result<f64> { row[i].parse::<f64>().map_err(|_| bad()) };
        let profile = PatientProfile {
            age: row[2].parse().map_err(|_| bad())?,
            sex: row[3].parse().map_err(|_| bad())?,
            weight: f(4)?,
            height: f(5)?,
        };
        let state = AnesthesiaState {
            profile,
            bis: f(6)?,
            mbp: f(7)?,
            bt: f(8)?,
            hr: f(9)?,
            rr: f(10)?,
            ppf_cp: f(11)?,
            ppf_ce: f(12)?,
            rftn_cp: f(13)?,
            rftn_ce: f(14)?,
            ppf_vol: f(15)?,
            rftn_vol: f(16)?,
            t: row[1].parse().map_err(|_| bad())?,
        };
        match &case_id {
            None => case_id = Some(row[0].to_string()),
            Some(id) if id != &row[0] => {
                return Err(Error::data(format!("{origin}: mixed case ids {id} / {}", &row[0])))
            }
            _ => {}
        }
        steps.push(state);
    }
    let case_id = case_id.ok_or_else(|| Error::data(format!("{origin}: empty record")))?;
    Ok(CaseRecord {
        case_id,
        profile: steps[0].profile,
        steps,
        start_time_s: 0.0,
    })
}

/// Sorted list of files with the given extension directly inside `dir`.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == ext))
        .collect();
    files.sort();
    Ok(files)
}

pub fn write_records_dir(dir: &Path, records: &[CaseRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for rec in records {
        let f = fs::File::create(dir.join(format!("{}.csv", rec.case_id)))?;
        write_record(std::io::BufWriter::new(f), rec)?;
    }
    Ok(())
}

pub fn read_records_dir(dir: &Path) -> Result<Vec<CaseRecord>> {
    list_files(dir, "csv")?
        .into_iter()
        .map(|p| {
            let f = fs::File::open(&p)?;
            read_record(std::io::BufReader::new(f), &p.display().to_string())
        })
        .collect()
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_record(vals: &[f64]) -> CaseRecord {
        let profile = PatientProfile::new(63, 0, 58.25, 161.0).unwrap();
        let steps = vals
            .iter()
            .enumerate()
            .map(|(t, &v)| AnesthesiaState {
                profile,
                bis: v,
                mbp: 80.0 + v * 1e-7,
                bt: 36.6,
                hr: 1.0 / 3.0,
                rr: 12.0,
                ppf_cp: v / 7.0,
                ppf_ce: 0.1 + 0.2,
                rftn_cp: 1e-17,
                rftn_ce: 0.0,
                ppf_vol: t as f64 * 0.35,
                rftn_vol: 5e-324,
                t,
            })
            .collect();
        CaseRecord {
            case_id: "case_0007".into(),
            profile,
            steps,
            start_time_s: 0.0,
        }
    }

    #[test]
    fn corrupt_track_rows_are_skipped() {
        let text = "case_id,indicator,time_s,value\n\
                    c1,bis,0,95\n\
                    c1,bis,1,oops\n\
                    c1,spo2,1,98\n\
                    c1,bis,2\n\
                    c1,bis,2,94.5\n\
                    c1,hr,0,70\n";
        let read = read_tracks(text.as_bytes(), "mem").unwrap();
        assert_eq!(read.warnings, 3);
        assert_eq!(read.tracks.len(), 2);
        let bis = read.tracks.iter().find(|t| t.indicator == Indicator::Bis).unwrap();
        assert_eq!(bis.samples, vec![(0.0, 95.0), (2.0, 94.5)]);
    }

    #[test]
    fn wrong_header_rejected() {
        let text = "case,indicator,time,value\nc1,bis,0,95\n";
        assert!(matches!(read_tracks(text.as_bytes(), "mem"), Err(Error::Data(_))));
    }

    #[test]
    fn profiles_round_trip() {
        let p = vec![
            ("a".to_string(), PatientProfile::new(30, 1, 80.5, 180.0).unwrap()),
            ("b".to_string(), PatientProfile::new(71, 0, 52.0, 155.5).unwrap()),
        ];
        let mut buf = Vec::new();
        write_profiles(&mut buf, &p).unwrap();
        let back = read_profiles(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back["a"], p[0].1);
    }

    proptest! {
        #[test]
        fn record_csv_is_bit_stable(vals in prop::collection::vec(0.0f64..100.0, 1..40)) {
            let rec = sample_record(&vals);
            let mut buf = Vec::new();
            write_record(&mut buf, &rec).unwrap();
            let back = read_record(buf.as_slice(), "mem").unwrap();
            prop_assert_eq!(back.steps.len(), rec.steps.len());
            for (a, b) in back.steps.iter().zip(&rec.steps) {
                for (x, y) in a.features().iter().zip(b.features()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
                prop_assert_eq!(a.t, b.t);
            }
        }

        #[test]
        fn track_csv_is_bit_stable(vals in prop::collection::vec(-1e6f64..1e6, 1..50)) {
            let samples: Vec<(f64, f64)> = vals.iter().enumerate().map(|(i, &v)| (i as f64 * 0.5, v)).collect();
            let tr = TrajectoryTrack::new("x", Indicator::RftnCe, samples);
            let mut buf = Vec::new();
            write_tracks(&mut buf, std::slice::from_ref(&tr)).unwrap();
            let back = read_tracks(buf.as_slice(), "mem").unwrap();
            prop_assert_eq!(back.warnings, 0);
            prop_assert_eq!(&back.tracks[0], &tr);
        }
    }
}
