//! Aggregation of replicate traces into plot-ready quantile bands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::diagnostics::TraceRow;
use crate::error::{Error, Result};

use super::io::read_trace_csv;

/// Linearly interpolated sample quantile; NaN entries are ignored.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().cloned().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub t: usize,
    pub replicates: usize,
    pub residual_q10: f64,
    pub residual_median: f64,
    pub residual_q90: f64,
    #[serde(rename = "det_Bt_q10")]
    pub det_bt_q10: f64,
    #[serde(rename = "det_Bt_median")]
    pub det_bt_median: f64,
    #[serde(rename = "det_Bt_q90")]
    pub det_bt_q90: f64,
    pub x_q10: f64,
    pub x_median: f64,
    pub x_q90: f64,
}

/// Per-trial bands across traces; trial `t` uses every trace that reached it.
pub fn aggregate_traces(traces: &[Vec<TraceRow>]) -> Vec<ReportRow> {
    let longest = traces.iter().map(Vec::len).max().unwrap_or(0);
    (0..longest)
        .map(|k| {
            let live: Vec<&TraceRow> = traces.iter().filter_map(|tr| tr.get(k)).collect();
            let band = |f: fn(&TraceRow) -> f64| {
                let v: Vec<f64> = live.iter().map(|r| f(r)).collect();
                (quantile(&v, 0.1), quantile(&v, 0.5), quantile(&v, 0.9))
            };
            let (r10, r50, r90) = band(|r| r.residual_unit);
            let (d10, d50, d90) = band(|r| r.det_bt_unit);
            let (x10, x50, x90) = band(|r| r.x);
            ReportRow {
                t: k + 1,
                replicates: live.len(),
                residual_q10: r10,
                residual_median: r50,
                residual_q90: r90,
                det_bt_q10: d10,
                det_bt_median: d50,
                det_bt_q90: d90,
                x_q10: x10,
                x_median: x50,
                x_q90: x90,
            }
        })
        .collect()
}

/// Reads every `*.csv` trace under `dir` (recursively, skipping earlier
/// reports) and writes `report.csv` there.
pub fn write_report_csv(dir: &Path) -> Result<(PathBuf, usize)> {
    let mut files = Vec::new();
    collect_traces(dir, &mut files)?;
    files.sort();
    if files.is_empty() {
        return Err(Error::validation(
            "report",
            format!("no trace CSVs under {}", dir.display()),
        ));
    }
    let traces = files
        .iter()
        .map(|p| read_trace_csv(p))
        .collect::<Result<Vec<_>>>()?;
    let rows = aggregate_traces(&traces);
    let out = dir.join("report.csv");
    let mut w = csv::Writer::from_path(&out)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok((out, files.len()))
}

fn collect_traces(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_traces(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "csv")
            && path.file_name().is_some_and(|n| n != "report.csv")
        {
            out.push(path);
        }
    }
    Ok(())
}
