//! Result persistence: one CSV per table with a header taken from the row
//! type's field names, and pretty JSON for summaries.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

/// Creates `dir` and returns `dir/name`.
pub fn output_path(dir: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    Ok(dir.join(name))
}

/// CSV text of `rows`; the header is written even when `rows` is empty.
pub fn to_csv<'a, T: Serialize + 'a>(rows: impl IntoIterator<Item = &'a T>, header: &[&str]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
}

pub fn write_csv<'a, T: Serialize + 'a>(path: &Path, rows: impl IntoIterator<Item = &'a T>, header: &[&str]) -> Result<()> {
    Ok(fs::write(path, to_csv(rows, header)?)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    Ok(fs::write(path, serde_json::to_string_pretty(value)? + "\n")?)
}

pub const BUNDLING_HEADER: [&str; 7] = ["steps", "t", "path", "info_trace", "cov_trace", "pos_trace", "rel_error"];
pub const TIMING_HEADER: [&str; 6] = ["sensor_path", "bundling", "landmarks", "repetitions", "mean_ms", "std_ms"];
pub const PARETO_HEADER: [&str; 14] = [
    "trial",
    "method",
    "rho",
    "status",
    "jc_base",
    "jc_final",
    "jc_increase_pct",
    "jobs",
    "reduction",
    "violation_time",
    "iterations",
    "converged",
    "improved",
    "wall_ms",
];
pub const TRACE_HEADER: [&str; 6] = ["trial", "method", "rho", "interval", "t", "trace"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::bundling::BundlingRow;
    use crate::harness::pareto::{MethodRow, TraceRow};
    use crate::harness::timing::TimingRecord;

    fn field_names<T: Serialize>(v: &T) -> Vec<String> {
        match serde_json::to_value(v).unwrap() {
            serde_json::Value::Object(m) => m.keys().cloned().collect(),
            _ => unreachable!(),
        }
    }

    fn sorted(h: &[&str]) -> Vec<String> {
        let mut v: Vec<String> = h.iter().map(|s| s.to_string()).collect();
        v.sort();
        v
    }

    #[test]
    fn headers_match_row_fields() {
        let b = BundlingRow { steps: 1, t: 0.0, path: String::new(), info_trace: 0.0, cov_trace: 0.0, pos_trace: 0.0, rel_error: 0.0 };
        let t = TimingRecord { sensor_path: String::new(), bundling: String::new(), landmarks: 0, repetitions: 0, mean_ms: 0.0, std_ms: 0.0 };
        let m = MethodRow {
            trial: 0,
            method: String::new(),
            rho: 0.0,
            status: String::new(),
            jc_base: 0.0,
            jc_final: 0.0,
            jc_increase_pct: 0.0,
            jobs: 0.0,
            reduction: 0.0,
            violation_time: 0.0,
            iterations: 0,
            converged: true,
            improved: true,
            wall_ms: 0.0,
        };
        let r = TraceRow { trial: 0, method: String::new(), rho: 0.0, interval: 0, t: 0.0, trace: 0.0 };
        assert_eq!(field_names(&b), sorted(&BUNDLING_HEADER));
        assert_eq!(field_names(&t), sorted(&TIMING_HEADER));
        assert_eq!(field_names(&m), sorted(&PARETO_HEADER));
        assert_eq!(field_names(&r), sorted(&TRACE_HEADER));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(&m).unwrap();
        let auto = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(auto.lines().next().unwrap(), PARETO_HEADER.join(","));
        let csv = to_csv([&b], &BUNDLING_HEADER).unwrap();
        assert_eq!(csv.lines().next().unwrap(), BUNDLING_HEADER.join(","));
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn empty_tables_keep_header() {
        let rows: Vec<TraceRow> = Vec::new();
        assert_eq!(to_csv(&rows, &TRACE_HEADER).unwrap(), TRACE_HEADER.join(",") + "\n");
    }
}
