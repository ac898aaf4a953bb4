use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::Serialize;

use super::config::{pooling_name, ExperimentConfig};
use super::features::{activation_ratio, feature_heatmap, write_pgm};
use super::run::{ensure_dataset, load_initial, RunPaths};
use crate::error::{Error, Result};
use crate::eval::read_metrics;

/// One row of the comparison table, copied from a run's config and metrics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub run: String,
    pub init: String,
    pub pooling: String,
    pub seed: u64,
    pub map: f64,
    pub top1: f64,
    pub detection_ap: f64,
    pub detection_recall: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportOutcome {
    pub rows: Vec<ReportRow>,
    /// Runs without a readable config or metrics file.
    pub missing: Vec<PathBuf>,
}

pub const REPORT_HEADER: [&str; 8] = [
    "run",
    "init",
    "pooling",
    "seed",
    "map",
    "top1",
    "detection_ap",
    "detection_recall",
];

fn read_row(dir: &Path) -> Result<ReportRow> {
    let paths = RunPaths::new(dir);
    let cfg = ExperimentConfig::load(&paths.config())?;
    let m = read_metrics(&paths.metrics())?;
    Ok(ReportRow {
        run: dir
            .file_name()
            .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned()),
        init: cfg.init.name().into(),
        pooling: pooling_name(cfg.model.pooling).into(),
        seed: cfg.seed,
        map: m.map,
        top1: m.top1,
        detection_ap: m.detection_ap,
        detection_recall: m.detection_recall,
    })
}

/// Comparison CSV over completed runs. Numbers are copied from each run's
/// metrics file; runs that cannot be read are listed and skipped.
pub fn emit_report(runs: &[PathBuf], out: &Path) -> Result<ReportOutcome> {
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for dir in runs {
        match read_row(dir) {
            Ok(r) => rows.push(r),
            Err(e) => {
                warn!("skipping {}: {e}", dir.display());
                missing.push(dir.clone());
            }
        }
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(out).map_err(|e| Error::format(out, e.to_string()))?;
    let err = |e: csv::Error| Error::format(out, e.to_string());
    w.write_record(REPORT_HEADER).map_err(err)?;
    for r in &rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(ReportOutcome { rows, missing })
}

/// Per-scene inside/outside activation ratio of a dumped heat map.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeatureRow {
    pub scene: usize,
    pub ratio: Option<f64>,
}

/// Writes `features/scene-NNNNN.pgm` heat maps of the initial (pre
/// fine-tuning) high-level features for the first `scenes` test scenes of a
/// run, plus `features/ratios.csv`.
pub fn dump_features(run: &Path, output_root: &Path, scenes: usize) -> Result<Vec<FeatureRow>> {
    let paths = RunPaths::new(run);
    let cfg = ExperimentConfig::load(&paths.config())?;
    let ds = ensure_dataset(output_root, &cfg.dataset)?;
    let model = load_initial(&paths)?;
    let dir = paths.features();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let stride = model.config.backbone.high_stride();
    let mut rows = Vec::new();
    for (s, scene) in ds.test.iter().take(scenes).enumerate() {
        let map = feature_heatmap(&model, &scene.image)?;
        write_pgm(&dir.join(format!("scene-{s:05}.pgm")), &map)?;
        rows.push(FeatureRow {
            scene: s,
            ratio: activation_ratio(&map, &scene.instances, stride),
        });
    }
    let p = dir.join("ratios.csv");
    let mut w = csv::Writer::from_path(&p).map_err(|e| Error::format(&p, e.to_string()))?;
    for r in &rows {
        w.serialize(r).map_err(|e| Error::format(&p, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&p, e))?;
    Ok(rows)
}
