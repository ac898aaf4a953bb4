//! Box geometry, anchors, RoI Align and multi-level RoI fusion pooling.

mod align;
mod anchors;
mod boxes;
pub mod mrfp;

pub use align::{roi_align, roi_align_backward, roi_align_batch, roi_align_batch_backward, AlignSpec, AlignWeights};
pub use anchors::{generate_anchors, ANCHOR_RATIOS, ANCHOR_SIZES, DESK_ANCHOR_SIZES};
pub use boxes::{clamp_delta, decode_box, encode_box, iou, nms, BBox, MAX_LOG_SCALE};
pub use mrfp::{mrfp, mrfp_backward, single_level, single_level_backward, MrfpCache, MrfpConfig, Neck};
