use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, InitMode};
use crate::data::{
    crop_instances, generate_dataset, generic_classes, generic_dataset, load_dataset, save_dataset, Dataset,
    DatasetConfig,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_search, write_metrics, SearchMetrics};
use crate::model::checkpoint::{load_reid, load_search, save_reid, save_search};
use crate::model::{transfer_weights, ReidModel, SearchModel};
use crate::rng::{rng_for, stream};
use crate::training::{finetune_with, pretrain, probe_losses, write_log, StepRecord};

/// File layout of one run directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        RunPaths { dir: dir.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.toml")
    }

    /// Re-id or generic pretraining checkpoint.
    pub fn pretrain_checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoints").join("pretrain")
    }

    pub fn pretrain_log(&self) -> PathBuf {
        self.dir.join("pretrain_log.csv")
    }

    /// Search model before fine-tuning.
    pub fn init_checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoints").join("init")
    }

    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.dir.join("checkpoints").join(format!("epoch-{epoch:03}"))
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoints").join("final")
    }

    /// Losses of the initialized model on a training batch, before any
    /// update.
    pub fn initial_losses(&self) -> PathBuf {
        self.dir.join("initial_losses.csv")
    }

    pub fn finetune_log(&self) -> PathBuf {
        self.dir.join("finetune_log.csv")
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.json")
    }

    pub fn features(&self) -> PathBuf {
        self.dir.join("features")
    }
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Content hash of a dataset config, as hex.
pub fn dataset_key(cfg: &DatasetConfig) -> String {
    let json = serde_json::to_string(cfg).expect("dataset config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Dataset directory under `root` keyed by the config's content hash.
pub fn dataset_dir(root: &Path, cfg: &DatasetConfig) -> PathBuf {
    root.join("datasets").join(&dataset_key(cfg)[..16])
}

/// Loads the cached dataset for `cfg`, generating and saving it first when
/// absent or stale.
pub fn ensure_dataset(root: &Path, cfg: &DatasetConfig) -> Result<Dataset> {
    let dir = dataset_dir(root, cfg);
    if dir.join("dataset.json").exists() {
        match load_dataset(&dir) {
            Ok(ds) if ds.config == *cfg => return Ok(ds),
            Ok(_) => info!("dataset cache {} holds another config; regenerating", dir.display()),
            Err(e) => info!("dataset cache {} unreadable ({e}); regenerating", dir.display()),
        }
    }
    let ds = generate_dataset(cfg)?;
    let tmp = dir.with_extension("partial");
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    save_dataset(&tmp, &ds)?;
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    fs::rename(&tmp, &dir).map_err(|e| Error::io(&dir, e))?;
    Ok(ds)
}

fn classes(cfg: &ExperimentConfig) -> usize {
    cfg.dataset.num_identities
}

/// Pretraining for the `stl` and `generic` arms; `None` for `random`.
pub fn stage_pretrain(cfg: &ExperimentConfig, ds: &Dataset, paths: &RunPaths) -> Result<Option<ReidModel>> {
    let (crops, classes, pcfg) = match cfg.init {
        InitMode::Random => return Ok(None),
        InitMode::Stl => (
            crop_instances(&ds.train, cfg.dataset.crop_h, cfg.dataset.crop_w)?,
            classes(cfg),
            &cfg.pretrain,
        ),
        InitMode::Generic => (
            generic_dataset(cfg.generic.per_class, cfg.dataset.crop_h, cfg.dataset.crop_w, cfg.seed)?,
            generic_classes(),
            &cfg.generic.pretrain,
        ),
    };
    let mut rng = rng_for(cfg.seed, stream::INIT, 1);
    let mut reid = ReidModel::new(cfg.model.backbone, classes, &mut rng)?;
    info!("pretraining ({}) on {} crops", cfg.init.name(), crops.len());
    let outcome = pretrain(&mut reid, &crops, pcfg, cfg.seed)?;
    mkdir(&paths.dir)?;
    write_log(&paths.pretrain_log(), &outcome.log)?;
    save_reid(&paths.pretrain_checkpoint(), &reid)?;
    Ok(Some(reid))
}

/// The search model before fine-tuning: fresh weights, with the backbone
/// transferred from `pretrained` when given.
pub fn stage_transfer(cfg: &ExperimentConfig, pretrained: Option<&ReidModel>, paths: &RunPaths) -> Result<SearchModel> {
    let mut rng = rng_for(cfg.seed, stream::INIT, 2);
    let mut model = SearchModel::new(cfg.model.clone(), classes(cfg), &mut rng)?;
    if let Some(p) = pretrained {
        transfer_weights(p, &mut model)?;
    }
    save_search(&paths.init_checkpoint(), &model)?;
    Ok(model)
}

fn probe(cfg: &ExperimentConfig, ds: &Dataset, model: &SearchModel, paths: &RunPaths) -> Result<()> {
    let n = cfg.finetune.schedule.batch_size.min(ds.train.len());
    let report = probe_losses(model, &ds.train[..n], &cfg.finetune, cfg.seed)?;
    write_log(
        &paths.initial_losses(),
        &[StepRecord {
            step: 0,
            epoch: 0,
            lr: 0.0,
            report,
        }],
    )
}

pub fn stage_finetune(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    mut model: SearchModel,
    paths: &RunPaths,
) -> Result<SearchModel> {
    mkdir(&paths.dir)?;
    probe(cfg, ds, &model, paths)?;
    info!("fine-tuning on {} scenes", ds.train.len());
    let every = cfg.checkpoint_every;
    let log = finetune_with(&mut model, &ds.train, &cfg.finetune, cfg.seed, |epoch, m| {
        if every > 0 && (epoch + 1) % every == 0 {
            save_search(&paths.epoch_checkpoint(epoch + 1), m)?;
        }
        Ok(())
    })?;
    write_log(&paths.finetune_log(), &log)?;
    save_search(&paths.final_checkpoint(), &model)?;
    Ok(model)
}

pub fn stage_evaluate(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    model: &SearchModel,
    paths: &RunPaths,
) -> Result<SearchMetrics> {
    let metrics = evaluate_search(model, ds, &cfg.eval)?;
    mkdir(&paths.dir)?;
    write_metrics(&paths.metrics(), &metrics)?;
    Ok(metrics)
}

pub fn write_config(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<()> {
    mkdir(&paths.dir)?;
    let p = paths.config();
    fs::write(&p, cfg.to_toml()).map_err(|e| Error::io(&p, e))
}

pub fn load_pretrained(paths: &RunPaths) -> Result<ReidModel> {
    load_reid(&paths.pretrain_checkpoint())
}

pub fn load_initial(paths: &RunPaths) -> Result<SearchModel> {
    load_search(&paths.init_checkpoint())
}

pub fn load_final(paths: &RunPaths) -> Result<SearchModel> {
    load_search(&paths.final_checkpoint())
}

/// Dataset, pretraining, transfer, fine-tuning and evaluation, with every
/// artifact under `output_root/<name>`.
pub fn run_experiment(cfg: &ExperimentConfig, output_root: &Path) -> Result<SearchMetrics> {
    cfg.validate()?;
    let paths = RunPaths::new(output_root.join(&cfg.name));
    write_config(cfg, &paths)?;
    let ds = ensure_dataset(output_root, &cfg.dataset)?;
    let pretrained = stage_pretrain(cfg, &ds, &paths)?;
    let model = stage_transfer(cfg, pretrained.as_ref(), &paths)?;
    let model = stage_finetune(cfg, &ds, model, &paths)?;
    let metrics = stage_evaluate(cfg, &ds, &model, &paths)?;
    info!(
        "{}: mAP {:.4} top-1 {:.4} det AP {:.4} recall {:.4}",
        cfg.name, metrics.map, metrics.top1, metrics.detection_ap, metrics.detection_recall
    );
    Ok(metrics)
}

/// One config per (init, pooling, seed), named `<base>-<init>-<pooling>-s<seed>`.
pub fn matrix_configs(
    base: &ExperimentConfig,
    inits: &[InitMode],
    poolings: &[crate::model::PoolingMode],
    seeds: &[u64],
) -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for &seed in seeds {
        for &init in inits {
            for &pooling in poolings {
                let mut c = base.clone();
                c.seed = seed;
                c.init = init;
                c.model.pooling = pooling;
                c.name = format!("{}-{}", base.name, c.arm_name());
                out.push(c);
            }
        }
    }
    out
}
