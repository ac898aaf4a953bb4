//! Training objectives and the per-step loss record.

mod classification;
mod detection;
mod metric;
mod report;

pub use classification::{class_balanced_ce, class_balanced_weights, cross_entropy_id, focal_loss, IdLoss};
pub use detection::{binary_cross_entropy, detection_loss, smooth_l1, DetectionLoss, DetectionTargets};
pub use metric::{batch_hard_triplet, hardest_pairs, CenterState};
pub use report::{pretrain_loss, search_loss, LossReport, PretrainLossConfig};
