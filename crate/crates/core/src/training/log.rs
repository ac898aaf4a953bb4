use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::LossReport;

/// One optimizer step of a training log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub report: LossReport,
}

pub fn log_header() -> Vec<&'static str> {
    let mut h = vec!["step", "epoch", "lr"];
    h.extend(LossReport::COLUMNS);
    h
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), |x| x.to_string())
}

/// Writes a CSV with one row per step. Absent loss terms are written as
/// `null`; numbers use the shortest representation that round-trips.
pub fn write_log(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(log_header()).map_err(err)?;
    for r in records {
        let mut row = vec![r.step.to_string(), r.epoch.to_string(), r.lr.to_string()];
        row.extend(r.report.values().into_iter().map(cell));
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<StepRecord>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let header: Vec<String> = rd
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    if header != log_header() {
        return Err(Error::format(path, format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let bad = |f: &str| Error::format(path, format!("bad field {f:?}"));
        let num = |f: &str| -> Result<Option<f64>> {
            if f == "null" {
                Ok(None)
            } else {
                f.parse().map(Some).map_err(|_| bad(f))
            }
        };
        let mut vals = [None; 10];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = num(&rec[3 + k])?;
        }
        out.push(StepRecord {
            step: rec[0].parse().map_err(|_| bad(&rec[0]))?,
            epoch: rec[1].parse().map_err(|_| bad(&rec[1]))?,
            lr: rec[2].parse().map_err(|_| bad(&rec[2]))?,
            report: LossReport::from_values(vals),
        });
    }
    Ok(out)
}
