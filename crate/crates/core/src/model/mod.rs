//! Backbone, detector, embedding head, the one-step search model and the
//! re-id pretraining model, plus weight transfer and checkpoints.

mod backbone;
pub mod checkpoint;
mod config;
mod detector;
mod layers;
mod reid;
mod search;
mod transfer;

pub use backbone::{Backbone, BackboneSpec, BaseCache, EmbedCache, EmbedHead, IdentCache};
pub use config::{PoolingMode, RoiConfig, RpnConfig, SearchConfig};
pub use detector::{assign_rpn_targets, propose, sample_rois, RoiHead, RoiSamples, RpnHead, RpnOutput, RpnTargets};
pub use layers::{check_layout, Conv, Init, Linear, Module};
pub use reid::{ReidCache, ReidModel, ReidOutput};
pub use search::{ConvNeck, SearchModel, StepOptions};
pub use transfer::{transfer_plan, transfer_weights};
