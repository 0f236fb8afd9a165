//! Trace CSV and summary JSON persistence.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::diagnostics::TraceRow;
use crate::error::{Error, Result};

use super::{RunResult, RunSummary, SweepResult};

/// Fixed trace header. Changing it requires bumping the format version.
pub const TRACE_HEADER: &str = "t,x,y,cost,cum_cost,gain_nats,entropy_nats,det_Bt_unit,det_Bt_cost,residual_unit,residual_cost,efficiency_ratio";

fn write_rows<W: Write>(w: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    if rows.is_empty() {
        w.write_record(TRACE_HEADER.split(','))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<R: Read>(r: R, source: &str) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(r);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != TRACE_HEADER {
        return Err(Error::ConfigParse(format!(
            "{source}: unexpected trace header"
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    write_rows(BufWriter::new(File::create(path)?), rows)
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    read_rows(
        BufReader::new(File::open(path)?),
        &path.display().to_string(),
    )
}

/// Trace CSV rendered in memory, byte-identical to the file output.
pub fn trace_csv_bytes(rows: &[TraceRow]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_rows(&mut buf, rows)?;
    Ok(buf)
}

pub fn parse_trace_csv(bytes: &[u8]) -> Result<Vec<TraceRow>> {
    read_rows(bytes, "trace")
}

fn trace_name(index: usize) -> String {
    format!("trace_{index:03}.csv")
}

/// Writes one trace CSV per replicate plus `summary.json`; returns the
/// trace paths.
pub fn write_run(result: &RunResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for rep in &result.replicates {
        let p = dir.join(trace_name(rep.summary.index));
        write_trace_csv(&p, &rep.rows)?;
        paths.push(p);
    }
    let json = serde_json::to_string_pretty(&result.summary)?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(paths)
}

/// One subdirectory per sweep entry plus a top-level `sweep.json`.
pub fn write_sweep(result: &SweepResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (k, run) in result.runs.iter().enumerate() {
        write_run(run, &dir.join(format!("run_{k:03}")))?;
    }
    let json = serde_json::to_string_pretty(&result.summary)?;
    fs::write(dir.join("sweep.json"), json + "\n")?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<RunSummary> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
