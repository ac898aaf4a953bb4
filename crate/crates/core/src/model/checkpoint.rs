//! Checkpoints: a directory holding a text manifest and one tensor stream.
//!
//! ```text
//! manifest.txt
//!   pslab-checkpoint 1
//!   kind reid|search
//!   meta <one-line JSON: architecture needed to rebuild the model>
//!   param <name> <d0>x<d1>...
//!   buffer <name> <d0>x<d1>...
//! tensors.bin
//!   the listed tensors in manifest order, each in the binary tensor format
//! ```
//!
//! Both model kinds share the format so that transferred tensors can be
//! compared by name across files.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backbone::BackboneSpec;
use super::config::SearchConfig;
use super::layers::Module;
use super::reid::ReidModel;
use super::search::SearchModel;
use crate::error::{Error, Result};
use crate::tensor::io::{read_tensor, write_tensor};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "pslab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const TENSORS_FILE: &str = "tensors.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ReidMeta {
    backbone: BackboneSpec,
    classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SearchMeta {
    config: SearchConfig,
    classes: usize,
}

/// One manifest line describing a stored tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub buffer: bool,
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub kind: String,
    pub meta: String,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    fn render(&self) -> String {
        let mut out = format!(
            "{CHECKPOINT_FORMAT} {CHECKPOINT_VERSION}\nkind {}\nmeta {}\n",
            self.kind, self.meta
        );
        for e in &self.entries {
            let dims: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
            let tag = if e.buffer { "buffer" } else { "param" };
            out.push_str(&format!("{tag} {} {}\n", e.name, dims.join("x")));
        }
        out
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |d: String| Error::format(path, d);
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let expected = format!("{CHECKPOINT_FORMAT} {CHECKPOINT_VERSION}");
        if header != expected {
            return Err(bad(format!("header {header:?}, expected {expected:?}")));
        }
        let kind = lines
            .next()
            .and_then(|l| l.strip_prefix("kind "))
            .ok_or_else(|| bad("missing kind line".into()))?
            .to_string();
        let meta = lines
            .next()
            .and_then(|l| l.strip_prefix("meta "))
            .ok_or_else(|| bad("missing meta line".into()))?
            .to_string();
        let mut entries = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let buffer = match parts.first() {
                Some(&"param") => false,
                Some(&"buffer") => true,
                _ => return Err(bad(format!("unexpected line {line:?}"))),
            };
            if parts.len() != 3 {
                return Err(bad(format!("unexpected line {line:?}")));
            }
            let shape = parts[2]
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("bad shape in {line:?}")))?;
            entries.push(ManifestEntry {
                buffer,
                name: parts[1].to_string(),
                shape,
            });
        }
        Ok(Manifest { kind, meta, entries })
    }
}

fn write_checkpoint<M: Module>(dir: &Path, kind: &str, meta: String, model: &M) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tensors: Vec<(bool, String, &Tensor)> = model
        .params()
        .into_iter()
        .map(|(n, t)| (false, n, t))
        .chain(model.buffers().into_iter().map(|(n, t)| (true, n, t)))
        .collect();
    let manifest = Manifest {
        kind: kind.to_string(),
        meta,
        entries: tensors
            .iter()
            .map(|(b, n, t)| ManifestEntry {
                buffer: *b,
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest.render()).map_err(|e| Error::io(&mpath, e))?;
    let tpath = dir.join(TENSORS_FILE);
    let mut w = BufWriter::new(File::create(&tpath).map_err(|e| Error::io(&tpath, e))?);
    for (_, _, t) in &tensors {
        write_tensor(&mut w, t).map_err(|e| Error::io(&tpath, e))?;
    }
    w.flush().map_err(|e| Error::io(&tpath, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    Manifest::parse(&text, &mpath)
}

fn fill_from<M: Module>(dir: &Path, manifest: &Manifest, model: &mut M) -> Result<()> {
    let tpath = dir.join(TENSORS_FILE);
    let mut r = BufReader::new(File::open(&tpath).map_err(|e| Error::io(&tpath, e))?);
    let mut loaded = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let t = read_tensor(&mut r, &tpath)?;
        if t.shape() != e.shape.as_slice() {
            return Err(Error::format(
                &tpath,
                format!("{} stored as {:?}, manifest says {:?}", e.name, t.shape(), e.shape),
            ));
        }
        loaded.push((e, t));
    }
    let mut slots: Vec<(bool, String, &mut Tensor)> = Vec::new();
    let buffer_names: Vec<String> = model.buffers().into_iter().map(|(n, _)| n).collect();
    // params_mut and buffers_mut cannot be borrowed together; do two passes.
    for (n, t) in model.params_mut() {
        slots.push((false, n, t));
    }
    let expected = slots.len() + buffer_names.len();
    if expected != loaded.len() {
        return Err(Error::format(
            &tpath,
            format!("{} tensors stored, model has {expected}", loaded.len()),
        ));
    }
    for (e, t) in loaded.iter().filter(|(e, _)| !e.buffer) {
        let slot = slots
            .iter_mut()
            .find(|s| s.1 == e.name)
            .ok_or_else(|| Error::format(&tpath, format!("unknown parameter {}", e.name)))?;
        if slot.2.shape() != t.shape() {
            return Err(Error::format(
                &tpath,
                format!("{} is {:?}, model expects {:?}", e.name, t.shape(), slot.2.shape()),
            ));
        }
        *slot.2 = t.clone();
    }
    drop(slots);
    let mut bufs = model.buffers_mut();
    for (e, t) in loaded.iter().filter(|(e, _)| e.buffer) {
        let slot = bufs
            .iter_mut()
            .find(|s| s.0 == e.name)
            .ok_or_else(|| Error::format(&tpath, format!("unknown buffer {}", e.name)))?;
        if slot.1.shape() != t.shape() {
            return Err(Error::format(
                &tpath,
                format!("{} is {:?}, model expects {:?}", e.name, t.shape(), slot.1.shape()),
            ));
        }
        *slot.1 = t.clone();
    }
    Ok(())
}

fn meta_of<T: for<'de> Deserialize<'de>>(dir: &Path, manifest: &Manifest, kind: &str) -> Result<T> {
    let mpath = dir.join(MANIFEST_FILE);
    if manifest.kind != kind {
        return Err(Error::format(
            &mpath,
            format!("checkpoint holds a {} model, expected {kind}", manifest.kind),
        ));
    }
    serde_json::from_str(&manifest.meta).map_err(|e| Error::format(&mpath, e.to_string()))
}

pub fn save_reid(dir: &Path, model: &ReidModel) -> Result<()> {
    let meta = ReidMeta {
        backbone: model.backbone.spec,
        classes: model.embed.classes(),
    };
    write_checkpoint(
        dir,
        "reid",
        serde_json::to_string(&meta).expect("meta serializes"),
        model,
    )
}

pub fn load_reid(dir: &Path) -> Result<ReidModel> {
    let manifest = read_manifest(dir)?;
    let meta: ReidMeta = meta_of(dir, &manifest, "reid")?;
    let mut model = ReidModel::new(meta.backbone, meta.classes, &mut ChaCha8Rng::seed_from_u64(0))?;
    fill_from(dir, &manifest, &mut model)?;
    Ok(model)
}

pub fn save_search(dir: &Path, model: &SearchModel) -> Result<()> {
    let meta = SearchMeta {
        config: model.config.clone(),
        classes: model.embed.classes(),
    };
    write_checkpoint(
        dir,
        "search",
        serde_json::to_string(&meta).expect("meta serializes"),
        model,
    )
}

pub fn load_search(dir: &Path) -> Result<SearchModel> {
    let manifest = read_manifest(dir)?;
    let meta: SearchMeta = meta_of(dir, &manifest, "search")?;
    let mut model = SearchModel::new(meta.config, meta.classes, &mut ChaCha8Rng::seed_from_u64(0))?;
    fill_from(dir, &manifest, &mut model)?;
    Ok(model)
}
