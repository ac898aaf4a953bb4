//! Re-id pretraining, joint fine-tuning, optimizers and rate schedules.

mod finetune;
mod log;
mod optim;
mod pretrain;
mod schedule;

pub use finetune::{finetune, finetune_with, identity_counts, probe_losses, FinetuneConfig};
pub use log::{log_header, read_log, write_log, StepRecord};
pub use optim::{adaptive_moment_step, clip_grad_norm, module_pairs, momentum_sgd_step, AdamState, SgdState};
pub use pretrain::{pretrain, PretrainConfig, PretrainOutcome};
pub use schedule::{FinetuneSchedule, PretrainSchedule};
