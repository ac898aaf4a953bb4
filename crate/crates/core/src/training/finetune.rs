use serde::{Deserialize, Serialize};

use super::log::StepRecord;
use super::optim::{clip_grad_norm, module_pairs, momentum_sgd_step, SgdState};
use super::pretrain::{non_finite, params_finite};
use super::schedule::FinetuneSchedule;
use crate::data::{augment_flip, SceneSample};
use crate::error::{Error, Result};
use crate::losses::{IdLoss, LossReport};
use crate::model::{Module, SearchModel, StepOptions};
use crate::rng::{rng_for, stream};
use crate::sampling::image_level_batches;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub schedule: FinetuneSchedule,
    pub id_loss: IdLoss,
    /// Weight of the identity term; 0 trains the detector alone.
    pub id_weight: f64,
    pub flip_probability: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            schedule: FinetuneSchedule::desk(),
            id_loss: IdLoss::CrossEntropy,
            id_weight: 1.0,
            flip_probability: 0.5,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(self.id_weight >= 0.0) {
            return Err(Error::config("finetune.id_weight", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::config("finetune.flip_probability", "must lie in [0, 1]"));
        }
        match self.id_loss {
            IdLoss::Focal { gamma, alpha } if !(gamma >= 0.0 && alpha > 0.0) => Err(Error::config(
                "finetune.id_loss",
                "focal needs gamma >= 0 and alpha > 0",
            )),
            IdLoss::ClassBalanced { beta } if !(0.0..1.0).contains(&beta) => Err(Error::config(
                "finetune.id_loss",
                "class-balanced beta must lie in [0, 1)",
            )),
            _ => Ok(()),
        }
    }
}

/// Labelled training instances per identity. Identities that never occur
/// count as 1 so that re-weighting stays finite.
pub fn identity_counts(scenes: &[SceneSample], classes: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; classes];
    for b in scenes.iter().flat_map(|s| &s.instances) {
        if let Some(id) = b.identity {
            *counts
                .get_mut(id)
                .ok_or(Error::LabelOutOfRange { label: id, classes })? += 1;
        }
    }
    Ok(counts.into_iter().map(|c| c.max(1)).collect())
}

fn options<'a>(cfg: &FinetuneConfig, counts: &'a [usize]) -> StepOptions<'a> {
    StepOptions {
        id_loss: cfg.id_loss,
        id_weight: cfg.id_weight,
        class_counts: counts,
    }
}

/// Joint detection and identification training with image-level batches,
/// horizontal flips and momentum SGD.
pub fn finetune(
    model: &mut SearchModel,
    scenes: &[SceneSample],
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<Vec<StepRecord>> {
    finetune_with(model, scenes, cfg, seed, |_, _| Ok(()))
}

/// [`finetune`] calling `on_epoch(epoch, model)` after every epoch.
pub fn finetune_with<F>(
    model: &mut SearchModel,
    scenes: &[SceneSample],
    cfg: &FinetuneConfig,
    seed: u64,
    mut on_epoch: F,
) -> Result<Vec<StepRecord>>
where
    F: FnMut(usize, &SearchModel) -> Result<()>,
{
    cfg.validate()?;
    let mut log = Vec::new();
    if cfg.schedule.epochs == 0 {
        return Ok(log);
    }
    let counts = identity_counts(scenes, model.embed.classes())?;
    let opts = options(cfg, &counts);
    let batch_size = cfg.schedule.batch_size;
    let mut sampler = image_level_batches(scenes.len(), batch_size, seed)?;
    let per_epoch = scenes.len().div_ceil(batch_size);
    let mut sgd = SgdState::for_module(model);
    let mut grad = model.zeros_like();
    let mut step = 0;
    for epoch in 0..cfg.schedule.epochs {
        let lr = cfg.schedule.lr_at(epoch)?;
        for _ in 0..per_epoch {
            let batch = sampler.next().expect("sampler is infinite");
            let mut aug = rng_for(seed, stream::AUGMENT, step as u64);
            let samples = batch
                .iter()
                .map(|&i| augment_flip(&scenes[i], cfg.flip_probability, &mut aug))
                .collect::<Result<Vec<_>>>()?;
            grad.zero_grad();
            let mut rng = rng_for(seed, stream::TRAIN, step as u64);
            let report = model.loss_and_grad(&samples, &opts, &mut rng, &mut grad)?;
            non_finite(step, &report)?;
            if let Some(c) = cfg.schedule.clip_norm {
                clip_grad_norm(&mut grad, c);
            }
            {
                let (mut params, grads) = module_pairs(model, &grad, "finetune")?;
                momentum_sgd_step(
                    &mut params,
                    &grads,
                    &mut sgd,
                    lr,
                    cfg.schedule.momentum,
                    cfg.schedule.weight_decay,
                )?;
            }
            params_finite(step, model)?;
            log.push(StepRecord {
                step,
                epoch,
                lr,
                report,
            });
            step += 1;
        }
        on_epoch(epoch, model)?;
    }
    Ok(log)
}

/// Losses of the joint objective on `scenes` without updating `model`.
pub fn probe_losses(
    model: &SearchModel,
    scenes: &[SceneSample],
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<LossReport> {
    let counts = identity_counts(scenes, model.embed.classes())?;
    let mut scratch = model.clone();
    let mut grad = model.zeros_like();
    let mut rng = rng_for(seed, stream::TRAIN, u64::MAX);
    scratch.loss_and_grad(scenes, &options(cfg, &counts), &mut rng, &mut grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, DatasetConfig};
    use crate::model::SearchConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scenes() -> Vec<SceneSample> {
        generate_dataset(&DatasetConfig {
            num_identities: 6,
            test_identities: 2,
            scenes: 8,
            test_scenes: 2,
            ..DatasetConfig::default()
        })
        .unwrap()
        .train
    }

    fn model() -> SearchModel {
        SearchModel::new(SearchConfig::default(), 6, &mut ChaCha8Rng::seed_from_u64(2)).unwrap()
    }

    fn short() -> FinetuneConfig {
        FinetuneConfig {
            schedule: FinetuneSchedule {
                epochs: 2,
                decay_epoch: 1,
                ..FinetuneSchedule::desk()
            },
            ..FinetuneConfig::default()
        }
    }

    #[test]
    fn deterministic_and_finite() {
        let data = scenes();
        let (mut a, mut b) = (model(), model());
        let la = finetune(&mut a, &data, &short(), 4).unwrap();
        let lb = finetune(&mut b, &data, &short(), 4).unwrap();
        assert_eq!(la.len(), 2 * data.len().div_ceil(4));
        assert_eq!(la, lb);
        assert_eq!(a, b);
        assert!(la.iter().all(|r| r.report.first_non_finite().is_none()));
    }

    #[test]
    fn focal_gamma_zero_matches_cross_entropy_trace() {
        let data = scenes();
        let (mut a, mut b) = (model(), model());
        let ce = finetune(&mut a, &data, &short(), 5).unwrap();
        let focal = FinetuneConfig {
            id_loss: IdLoss::Focal { gamma: 0.0, alpha: 1.0 },
            ..short()
        };
        let fl = finetune(&mut b, &data, &focal, 5).unwrap();
        assert_eq!(ce, fl);
    }

    #[test]
    fn detector_only_leaves_classifier_alone() {
        let data = scenes();
        let mut m = model();
        let before = m.embed.classifier.clone();
        let cfg = FinetuneConfig {
            id_weight: 0.0,
            ..short()
        };
        let log = finetune(&mut m, &data, &cfg, 6).unwrap();
        assert!(log.iter().all(|r| r.report.L_id == Some(0.0)));
        // Only weight decay acts on the classifier.
        assert!(m.embed.classifier.weight.sub(&before.weight).unwrap().max_abs() < 1e-2);
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let mut m = model();
        let before = m.clone();
        let cfg = FinetuneConfig {
            schedule: FinetuneSchedule {
                epochs: 0,
                ..FinetuneSchedule::desk()
            },
            ..FinetuneConfig::default()
        };
        assert!(finetune(&mut m, &scenes(), &cfg, 0).unwrap().is_empty());
        assert_eq!(m, before);
    }
}
