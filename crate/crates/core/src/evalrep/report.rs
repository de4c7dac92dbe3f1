//! Comparison tables, mean trajectories and box statistics, and their files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::boxstats::{box_stats, BoxStats};
use super::{mdape, mdpe, Trajectory};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::types::Indicator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub case_id: String,
    pub method: String,
    pub steps: usize,
    pub cr: f64,
    pub mdpe: f64,
    pub mdape: f64,
    /// Differences against the reference method on the same case.
    pub cr_diff: f64,
    pub mdpe_diff: f64,
    pub mdape_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub n_cases: usize,
    /// Sum over cases.
    pub cr: f64,
    pub cr_mean: f64,
    pub mdpe_mean: f64,
    pub mdpe_max: f64,
    pub mdpe_min: f64,
    pub mdpe_std: f64,
    pub mdape_mean: f64,
    pub mdape_max: f64,
    pub mdape_min: f64,
    pub mdape_std: f64,
}

/// Per-step means of one indicator across cases, one column per method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajMeans {
    pub indicator: Indicator,
    pub methods: Vec<String>,
    /// `(step, cases still running, mean per method)`.
    pub rows: Vec<(usize, usize, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub methods: Vec<String>,
    pub per_case: Vec<CaseRow>,
    pub aggregate: Vec<AggregateRow>,
    pub trajectories: Vec<TrajMeans>,
    /// method -> metric -> statistics.
    pub boxstats: BTreeMap<String, BTreeMap<String, BoxStats>>,
}

impl Report {
    pub fn aggregate_for(&self, method: &str) -> Option<&AggregateRow> {
        self.aggregate.iter().find(|r| r.method == method)
    }
}

fn mean_max_min_std(v: &[f64]) -> (f64, f64, f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, max, min, std)
}

/// Compare methods on the same cases. The first method is the reference
/// that difference columns are taken against.
pub fn compare_report(methods: &[(&str, &[Trajectory])]) -> Result<Report> {
    let (ref_name, reference) = methods.first().ok_or_else(|| Error::domain("report needs at least one method"))?;
    let mut ref_ids: Vec<&str> = reference.iter().map(|t| t.case_id.as_str()).collect();
    ref_ids.sort_unstable();
    if ref_ids.is_empty() {
        return Err(Error::domain("report needs at least one case"));
    }
    if ref_ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::domain("duplicate case id in the reference set"));
    }
    let metrics = |t: &Trajectory| -> Result<(f64, f64, f64)> {
        let bis = t.bis_series();
        Ok((t.cr(), mdpe(&bis)?, mdape(&bis)?))
    };
    let ref_metrics: BTreeMap<&str, (f64, f64, f64)> = reference
        .iter()
        .map(|t| Ok((t.case_id.as_str(), metrics(t)?)))
        .collect::<Result<_>>()?;

    let mut per_case = Vec::new();
    let mut aggregate = Vec::new();
    let mut boxes = BTreeMap::new();
    for (name, trajs) in methods {
        let mut ids: Vec<&str> = trajs.iter().map(|t| t.case_id.as_str()).collect();
        ids.sort_unstable();
        if ids != ref_ids {
            return Err(Error::domain(format!("method '{name}' was evaluated on different cases than '{ref_name}'")));
        }
        let mut sorted: Vec<&Trajectory> = trajs.iter().collect();
        sorted.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        let (mut crs, mut pes, mut apes) = (Vec::new(), Vec::new(), Vec::new());
        for t in sorted {
            let (cr, pe, ape) = metrics(t)?;
            let (rcr, rpe, rape) = ref_metrics[t.case_id.as_str()];
            per_case.push(CaseRow {
                case_id: t.case_id.clone(),
                method: name.to_string(),
                steps: t.rewards.len(),
                cr,
                mdpe: pe,
                mdape: ape,
                cr_diff: cr - rcr,
                mdpe_diff: pe - rpe,
                mdape_diff: ape - rape,
            });
            crs.push(cr);
            pes.push(pe);
            apes.push(ape);
        }
        let (pm, pmax, pmin, pstd) = mean_max_min_std(&pes);
        let (am, amax, amin, astd) = mean_max_min_std(&apes);
        aggregate.push(AggregateRow {
            method: name.to_string(),
            n_cases: crs.len(),
            cr: crs.iter().sum(),
            cr_mean: crs.iter().sum::<f64>() / crs.len() as f64,
            mdpe_mean: pm,
            mdpe_max: pmax,
            mdpe_min: pmin,
            mdpe_std: pstd,
            mdape_mean: am,
            mdape_max: amax,
            mdape_min: amin,
            mdape_std: astd,
        });
        let mut b = BTreeMap::new();
        b.insert("cr".to_string(), box_stats(&crs)?);
        b.insert("mdpe".to_string(), box_stats(&pes)?);
        b.insert("mdape".to_string(), box_stats(&apes)?);
        boxes.insert(name.to_string(), b);
    }

    let names: Vec<String> = methods.iter().map(|(n, _)| n.to_string()).collect();
    let max_len = methods
        .iter()
        .flat_map(|(_, t)| t.iter().map(|t| t.states.len()))
        .max()
        .unwrap_or(0);
    let trajectories = Indicator::ALL
        .iter()
        .map(|&ind| {
            let rows = (0..max_len)
                .map(|k| {
                    let n = reference.iter().filter(|t| t.states.len() > k).count();
                    let means = methods
                        .iter()
                        .map(|(_, ts)| {
                            let vals: Vec<f64> = ts.iter().filter_map(|t| t.states.get(k)).map(|s| s.indicator(ind)).collect();
                            if vals.is_empty() {
                                f64::NAN
                            } else {
                                vals.iter().sum::<f64>() / vals.len() as f64
                            }
                        })
                        .collect();
                    (k, n, means)
                })
                .collect();
            TrajMeans {
                indicator: ind,
                methods: names.clone(),
                rows,
            }
        })
        .collect();

    Ok(Report {
        methods: names,
        per_case,
        aggregate,
        trajectories,
        boxstats: boxes,
    })
}

const README: &str = "# Evaluation report

All policies start from the first recorded state of each held-out case and
run for that case's length. BIS-based metrics use the full BIS series
including the initial state. The first method listed is the reference.

## metrics_per_case.csv

| column | meaning |
|---|---|
| case_id | case identifier |
| method | policy or trajectory source |
| steps | number of 30 s decisions |
| cr | cumulative reward over the case |
| mdpe | median performance error of BIS against 50, percent |
| mdape | median absolute performance error of BIS against 50, percent |
| cr_diff, mdpe_diff, mdape_diff | value minus the reference method's value on the same case |

## metrics_aggregate.csv

| column | meaning |
|---|---|
| method | policy or trajectory source |
| n_cases | cases evaluated |
| cr | cumulative reward summed over cases |
| cr_mean | mean per-case cumulative reward |
| mdpe_mean, mdpe_max, mdpe_min, mdpe_std | statistics of per-case MDPE (sample standard deviation) |
| mdape_mean, mdape_max, mdape_min, mdape_std | statistics of per-case MDAPE |

## traj_mean_<indicator>.csv

One file per recorded indicator. Columns: `step`, `n_cases` (cases of the
reference set still running at that step), then one column per method
holding the mean of the indicator across cases at that step.

## boxstats.json

`method -> metric (cr, mdpe, mdape) -> {n, min, q1, median, q3, max,
whisker_low, whisker_high, outliers}`. Quartiles interpolate linearly;
whiskers reach the most extreme values within 1.5 IQR of the quartiles.
";

pub fn write_report(dir: &Path, report: &Report) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("metrics_per_case.csv"))?;
    for r in &report.per_case {
        w.serialize(r)?;
    }
    w.flush()?;
    write_aggregate_csv(fs::File::create(dir.join("metrics_aggregate.csv"))?, &report.aggregate)?;
    for t in &report.trajectories {
        let mut w = csv::Writer::from_path(dir.join(format!("traj_mean_{}.csv", t.indicator.name())))?;
        let mut header = vec!["step".to_string(), "n_cases".to_string()];
        header.extend(t.methods.iter().cloned());
        w.write_record(&header)?;
        for (k, n, means) in &t.rows {
            let mut rec = vec![k.to_string(), n.to_string()];
            rec.extend(means.iter().map(|m| if m.is_nan() { String::new() } else { fmt_f64(*m) }));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    crate::io::write_json(&dir.join("boxstats.json"), &report.boxstats)?;
    fs::write(dir.join("README.md"), README)?;
    Ok(())
}

pub fn write_aggregate_csv<W: std::io::Write>(out: W, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_per_case_csv<R: Read>(input: R) -> Result<Vec<CaseRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn read_aggregate_csv<R: Read>(input: R) -> Result<Vec<AggregateRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}
