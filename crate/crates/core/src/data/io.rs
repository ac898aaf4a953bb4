//! On-disk dataset layout (version 1):
//!
//! ```text
//! <dir>/dataset.json      format tag, version, generating config, scene counts
//! <dir>/annotations.csv   split,scene,x1,y1,x2,y2,identity   (identity empty if unlabeled)
//! <dir>/queries.csv       identity,scene,x1,y1,x2,y2         (scene indexes the test split)
//! <dir>/images/<split>-<scene:05>.pslt   3×H×W tensor per scene
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::DatasetConfig;
use super::scene::{Dataset, Query, SceneSample, Split};
use crate::error::{Error, Result};
use crate::roi::BBox;
use crate::tensor;

pub const DATASET_FORMAT: &str = "pslab-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config: DatasetConfig,
    train_scenes: usize,
    test_scenes: usize,
    queries: usize,
}

#[derive(Serialize, Deserialize)]
struct AnnotationRow {
    split: String,
    scene: usize,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    identity: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct QueryRow {
    identity: usize,
    scene: usize,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

fn image_path(dir: &Path, split: Split, scene: usize) -> PathBuf {
    dir.join("images").join(format!("{}-{scene:05}.pslt", split.name()))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        config: ds.config.clone(),
        train_scenes: ds.train.len(),
        test_scenes: ds.test.len(),
        queries: ds.queries.len(),
    };
    let mpath = dir.join("dataset.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))?;

    let apath = dir.join("annotations.csv");
    let mut w = csv::Writer::from_path(&apath).map_err(|e| csv_err(&apath, e))?;
    for (split, scenes) in [(Split::Train, &ds.train), (Split::Test, &ds.test)] {
        for (s, scene) in scenes.iter().enumerate() {
            tensor::io::save(&image_path(dir, split, s), &scene.image)?;
            for b in &scene.instances {
                w.serialize(AnnotationRow {
                    split: split.name().into(),
                    scene: s,
                    x1: b.x1,
                    y1: b.y1,
                    x2: b.x2,
                    y2: b.y2,
                    identity: b.identity,
                })
                .map_err(|e| csv_err(&apath, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&apath, e))?;

    let qpath = dir.join("queries.csv");
    let mut w = csv::Writer::from_path(&qpath).map_err(|e| csv_err(&qpath, e))?;
    for q in &ds.queries {
        w.serialize(QueryRow {
            identity: q.identity,
            scene: q.scene,
            x1: q.bbox.x1,
            y1: q.bbox.y1,
            x2: q.bbox.x2,
            y2: q.bbox.y2,
        })
        .map_err(|e| csv_err(&qpath, e))?;
    }
    w.flush().map_err(|e| Error::io(&qpath, e))?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join("dataset.json");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&mpath, e.to_string()))?;
    if manifest.format != DATASET_FORMAT || manifest.version != DATASET_VERSION {
        return Err(Error::format(
            &mpath,
            format!("unsupported dataset {} v{}", manifest.format, manifest.version),
        ));
    }
    let load_split = |split: Split, n: usize| -> Result<Vec<SceneSample>> {
        (0..n)
            .map(|s| {
                Ok(SceneSample {
                    image: tensor::io::load(&image_path(dir, split, s))?,
                    instances: Vec::new(),
                })
            })
            .collect()
    };
    let mut train = load_split(Split::Train, manifest.train_scenes)?;
    let mut test = load_split(Split::Test, manifest.test_scenes)?;

    let apath = dir.join("annotations.csv");
    let mut r = csv::Reader::from_path(&apath).map_err(|e| csv_err(&apath, e))?;
    for row in r.deserialize::<AnnotationRow>() {
        let row = row.map_err(|e| csv_err(&apath, e))?;
        let scenes = match row.split.as_str() {
            "train" => &mut train,
            "test" => &mut test,
            other => return Err(Error::format(&apath, format!("unknown split {other:?}"))),
        };
        let scene = scenes
            .get_mut(row.scene)
            .ok_or_else(|| Error::format(&apath, format!("scene {} out of range", row.scene)))?;
        scene
            .instances
            .push(BBox::new(row.x1, row.y1, row.x2, row.y2).with_identity(row.identity));
    }

    let qpath = dir.join("queries.csv");
    let mut r = csv::Reader::from_path(&qpath).map_err(|e| csv_err(&qpath, e))?;
    let mut queries = Vec::with_capacity(manifest.queries);
    for row in r.deserialize::<QueryRow>() {
        let row = row.map_err(|e| csv_err(&qpath, e))?;
        queries.push(Query {
            identity: row.identity,
            scene: row.scene,
            bbox: BBox::new(row.x1, row.y1, row.x2, row.y2).with_identity(Some(row.identity)),
        });
    }
    Ok(Dataset {
        config: manifest.config,
        train,
        test,
        queries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_dataset;

    #[test]
    fn round_trip() {
        let cfg = DatasetConfig {
            num_identities: 4,
            test_identities: 3,
            scenes: 3,
            test_scenes: 4,
            ..Default::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn wrong_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = serde_json::json!({
            "format": DATASET_FORMAT, "version": 99, "config": DatasetConfig::default(),
            "train_scenes": 0, "test_scenes": 0, "queries": 0
        });
        fs::write(dir.path().join("dataset.json"), m.to_string()).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format { .. })));
    }
}
