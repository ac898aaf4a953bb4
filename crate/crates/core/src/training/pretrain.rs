use serde::{Deserialize, Serialize};

use super::log::StepRecord;
use super::optim::{adaptive_moment_step, module_pairs, AdamState};
use super::schedule::PretrainSchedule;
use crate::data::{augment_flip, augment_random_erase, CropSample, EraseParams};
use crate::error::{Error, Result};
use crate::losses::{batch_hard_triplet, cross_entropy_id, CenterState, LossReport, PretrainLossConfig};
use crate::model::{Module, ReidModel};
use crate::rng::{rng_for, stream};
use crate::sampling::{ClassAwareSampler, SamplerConfig};
use crate::tensor::{BnMode, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub sampler: SamplerConfig,
    pub loss: PretrainLossConfig,
    pub schedule: PretrainSchedule,
    pub flip_probability: f64,
    /// Random erasing; `None` disables it.
    pub erase: Option<EraseParams>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            sampler: SamplerConfig::default(),
            loss: PretrainLossConfig::default(),
            schedule: PretrainSchedule::desk(),
            flip_probability: 0.5,
            erase: Some(EraseParams::default()),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.loss.validate()?;
        self.schedule.validate()?;
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::config("pretrain.flip_probability", "must lie in [0, 1]"));
        }
        if let Some(e) = &self.erase {
            e.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub log: Vec<StepRecord>,
    pub centers: CenterState,
}

pub(crate) fn non_finite(step: usize, report: &LossReport) -> Result<()> {
    match report.first_non_finite() {
        Some(term) => Err(Error::NonFinite {
            step,
            term: term.to_string(),
        }),
        None => Ok(()),
    }
}

pub(crate) fn params_finite<M: Module>(step: usize, model: &M) -> Result<()> {
    match model.params().into_iter().find(|(_, t)| !t.is_finite()) {
        Some((name, _)) => Err(Error::NonFinite {
            step,
            term: format!("parameter {name}"),
        }),
        None => Ok(()),
    }
}

/// Re-id pretraining on identity crops with class-aware P×K batches, Adam,
/// flip and random-erase augmentation, and the identity + triplet + center
/// objective. Centres follow their own update rule after every step.
pub fn pretrain(
    model: &mut ReidModel,
    crops: &[CropSample],
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let classes = model.embed.classes();
    let dim = model.backbone.spec.embedding_dim();
    let mut centers = CenterState::zeros(classes, dim);
    let mut log = Vec::new();
    if cfg.schedule.epochs == 0 {
        return Ok(PretrainOutcome { log, centers });
    }
    if crops.is_empty() {
        return Err(Error::invalid("pretrain", "no crops"));
    }
    let labels: Vec<usize> = crops.iter().map(|c| c.identity_id).collect();
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::LabelOutOfRange { label: y, classes });
    }
    let sampler_cfg = SamplerConfig { seed, ..cfg.sampler };
    let mut sampler = ClassAwareSampler::new(&labels, sampler_cfg)?;
    let per_epoch = sampler.batches_per_epoch();
    let mut adam = AdamState::for_module(model);
    let mut grad = model.zeros_like();
    let mut step = 0;
    for epoch in 0..cfg.schedule.epochs {
        let lr = cfg.schedule.lr_at(epoch)?;
        for _ in 0..per_epoch {
            let batch = sampler.next().expect("sampler is infinite");
            let mut rng = rng_for(seed, stream::AUGMENT, step as u64);
            let mut images = Vec::with_capacity(batch.len());
            let mut batch_labels = Vec::with_capacity(batch.len());
            for &i in &batch {
                let mut sample = augment_flip(&crops[i], cfg.flip_probability, &mut rng)?;
                if let Some(e) = &cfg.erase {
                    sample = augment_random_erase(&sample, e, &mut rng)?;
                }
                images.push(sample.image);
                batch_labels.push(sample.identity_id);
            }
            let input = Tensor::stack(&images)?;
            let out = model.forward(&input, BnMode::Train)?;
            let (l_id, g_logits) = cross_entropy_id(&out.logits, &batch_labels)?;
            let tri = if cfg.loss.triplet {
                Some(batch_hard_triplet(
                    &out.embeddings,
                    &batch_labels,
                    cfg.loss.triplet_margin,
                )?)
            } else {
                None
            };
            let center = if cfg.loss.center {
                Some(centers.loss(&out.embeddings, &batch_labels)?)
            } else {
                None
            };
            let lambda = cfg.loss.lambda_center;
            let report = LossReport::pretrain(l_id, tri.as_ref().map(|t| t.0), center.as_ref().map(|c| c.0), lambda);
            non_finite(step, &report)?;
            let mut g_emb = Tensor::zeros(out.embeddings.shape());
            if let Some((_, g)) = &tri {
                g_emb.add_assign(g)?;
            }
            if let Some((_, g)) = &center {
                g_emb.axpy(lambda, g)?;
            }
            grad.zero_grad();
            model.backward(&out.cache, Some(&g_emb), Some(&g_logits), &mut grad)?;
            {
                let (mut params, grads) = module_pairs(model, &grad, "pretrain")?;
                adaptive_moment_step(&mut params, &grads, &mut adam, lr, cfg.schedule.weight_decay)?;
            }
            if cfg.loss.center {
                centers.update(&out.embeddings, &batch_labels, cfg.loss.center_lr)?;
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
    }
    Ok(PretrainOutcome { log, centers })
}
