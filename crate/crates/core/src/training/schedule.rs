use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warm-up followed by step decay, indexed by epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSchedule {
    pub epochs: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub warmup_start_lr: f64,
    /// Epochs at which the rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub weight_decay: f64,
}

impl PretrainSchedule {
    /// 120 epochs, 10 of warm-up from 3.5e-5 to 3.5e-4, ×0.1 at 40 and 70.
    pub fn full_scale() -> Self {
        PretrainSchedule {
            epochs: 120,
            base_lr: 3.5e-4,
            warmup_epochs: 10,
            warmup_start_lr: 3.5e-5,
            decay_epochs: vec![40, 70],
            decay_factor: 0.1,
            weight_decay: 5e-4,
        }
    }

    /// Desk-scale rates: an epoch is only a few P×K batches, so the rate is
    /// ten times higher and the decays come later than in
    /// [`PretrainSchedule::full_scale`].
    pub fn desk() -> Self {
        PretrainSchedule {
            base_lr: 3e-3,
            warmup_start_lr: 3e-4,
            decay_epochs: vec![80, 100],
            ..Self::full_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::config("pretrain.base_lr", "must be positive"));
        }
        if self.warmup_epochs > 0 && !(self.warmup_start_lr > 0.0 && self.warmup_start_lr < self.base_lr) {
            return Err(Error::config("pretrain.warmup_start_lr", "must lie in (0, base_lr)"));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("pretrain.decay_epochs", "must be strictly increasing"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::config("pretrain.decay_factor", "must lie in (0, 1]"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("pretrain.weight_decay", "must be non-negative"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.epochs {
            return Err(Error::invalid("lr_at", format!("epoch {epoch} of {}", self.epochs)));
        }
        let lr = if epoch < self.warmup_epochs {
            let t = epoch as f64 / self.warmup_epochs as f64;
            (1.0 - t) * self.warmup_start_lr + t * self.base_lr
        } else {
            self.base_lr
        };
        let decays = self.decay_epochs.iter().filter(|&&d| d <= epoch).count();
        Ok(decayed(lr, self.decay_factor, decays))
    }
}

/// `lr · factor^k`, computed as a division by the reciprocal so that
/// factors like 0.1 produce the correctly rounded decimal results.
fn decayed(lr: f64, factor: f64, k: usize) -> f64 {
    if k == 0 {
        lr
    } else {
        lr / (1.0 / factor).powi(k as i32)
    }
}

/// Constant rate with a single step decay, indexed by epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSchedule {
    pub epochs: usize,
    pub lr: f64,
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub momentum: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl FinetuneSchedule {
    /// 20 epochs at 0.005, decayed to 0.0005 after 12, batch 16, no clipping.
    pub fn full_scale() -> Self {
        FinetuneSchedule {
            epochs: 20,
            lr: 0.005,
            decay_epoch: 12,
            decay_factor: 0.1,
            weight_decay: 5e-4,
            batch_size: 16,
            momentum: 0.9,
            clip_norm: None,
        }
    }

    pub fn desk() -> Self {
        FinetuneSchedule {
            epochs: 30,
            decay_epoch: 20,
            batch_size: 4,
            lr: 0.01,
            clip_norm: Some(10.0),
            ..Self::full_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs > 0 && self.decay_epoch >= self.epochs {
            return Err(Error::config("finetune.decay_epoch", "must be below epochs"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("finetune.lr", "must be positive"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::config("finetune.decay_factor", "must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("finetune.batch_size", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("finetune.momentum", "must lie in [0, 1)"));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::config("finetune.clip_norm", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("finetune.weight_decay", "must be non-negative"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.epochs {
            return Err(Error::invalid("lr_at", format!("epoch {epoch} of {}", self.epochs)));
        }
        Ok(decayed(
            self.lr,
            self.decay_factor,
            usize::from(epoch >= self.decay_epoch),
        ))
    }
}
