use serde::{Deserialize, Serialize};

use super::backbone::BackboneSpec;
use crate::error::{Error, Result};
use crate::roi::{MrfpConfig, ANCHOR_RATIOS, ANCHOR_SIZES, DESK_ANCHOR_SIZES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMode {
    /// RoI features from the high-level map only.
    Single,
    /// High-level crop fused with the necked low-level crop.
    Mrfp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RpnConfig {
    pub anchor_sizes: Vec<f64>,
    pub anchor_ratios: Vec<f64>,
    pub positive_iou: f64,
    pub negative_iou: f64,
    /// Anchors sampled per image for the objectness loss.
    pub batch_per_image: usize,
    pub positive_fraction: f64,
    pub pre_nms_top_n: usize,
    pub nms_iou: f64,
    pub post_nms_top_n: usize,
}

impl Default for RpnConfig {
    fn default() -> Self {
        RpnConfig {
            anchor_sizes: DESK_ANCHOR_SIZES.to_vec(),
            anchor_ratios: ANCHOR_RATIOS.to_vec(),
            positive_iou: 0.7,
            negative_iou: 0.3,
            batch_per_image: 256,
            positive_fraction: 0.5,
            pre_nms_top_n: 200,
            nms_iou: 0.7,
            post_nms_top_n: 50,
        }
    }
}

impl RpnConfig {
    /// Full-scale anchor sizes.
    pub fn full_scale() -> Self {
        RpnConfig {
            anchor_sizes: ANCHOR_SIZES.to_vec(),
            ..Self::default()
        }
    }

    pub fn anchors_per_location(&self) -> usize {
        self.anchor_sizes.len() * self.anchor_ratios.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiConfig {
    /// `(h, w)` of the RoI Align grid feeding the box head.
    pub pooled: (usize, usize),
    pub hidden: usize,
    /// Proposals sampled per image for the box head.
    pub batch_per_image: usize,
    pub foreground_fraction: f64,
    pub foreground_iou: f64,
    /// Foreground proposals per image that also feed the identity loss.
    pub id_proposals_per_image: usize,
    pub detection_nms_iou: f64,
    pub max_detections: usize,
    /// Detections below this foreground score are dropped before NMS.
    pub min_score: f64,
}

impl Default for RoiConfig {
    fn default() -> Self {
        RoiConfig {
            pooled: (8, 4),
            hidden: 64,
            batch_per_image: 32,
            foreground_fraction: 0.5,
            foreground_iou: 0.5,
            id_proposals_per_image: 4,
            detection_nms_iou: 0.4,
            max_detections: 20,
            min_score: 0.05,
        }
    }
}

/// Architecture of the one-step search model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub backbone: BackboneSpec,
    pub pooling: PoolingMode,
    /// `(h, w)` of the fused identification crop at the high level.
    pub id_pooled: (usize, usize),
    pub sampling: usize,
    pub rpn: RpnConfig,
    pub roi: RoiConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            backbone: BackboneSpec::default(),
            pooling: PoolingMode::Mrfp,
            id_pooled: (4, 2),
            sampling: 2,
            rpn: RpnConfig::default(),
            roi: RoiConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn mrfp(&self) -> MrfpConfig {
        MrfpConfig {
            sampling: self.sampling,
            ..MrfpConfig::new(self.id_pooled, self.backbone.high_stride()).expect("validated")
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        MrfpConfig::new(self.id_pooled, self.backbone.high_stride())
            .map_err(|e| Error::config("model.id_pooled", e.to_string()))?;
        if self.backbone.low_stride() * 2 != self.backbone.high_stride() {
            return Err(Error::config(
                "backbone.strides",
                "S3 must have stride 2 so the low level is twice the high resolution",
            ));
        }
        if self.sampling == 0 {
            return Err(Error::config("model.sampling", "must be positive"));
        }
        let r = &self.rpn;
        if r.anchor_sizes.is_empty() || r.anchor_ratios.is_empty() {
            return Err(Error::config(
                "rpn.anchor_sizes",
                "anchor sizes and ratios must be nonempty",
            ));
        }
        if !(r.negative_iou <= r.positive_iou) {
            return Err(Error::config("rpn.negative_iou", "must not exceed positive_iou"));
        }
        if r.batch_per_image == 0 || r.post_nms_top_n == 0 || r.pre_nms_top_n == 0 {
            return Err(Error::config("rpn", "sample and proposal counts must be positive"));
        }
        if !(0.0..=1.0).contains(&r.positive_fraction) || !(0.0..=1.0).contains(&self.roi.foreground_fraction) {
            return Err(Error::config("rpn.positive_fraction", "fractions lie in [0, 1]"));
        }
        if self.roi.pooled.0 == 0 || self.roi.pooled.1 == 0 || self.roi.hidden == 0 || self.roi.batch_per_image == 0 {
            return Err(Error::config(
                "roi",
                "pooled size, hidden width and batch must be positive",
            ));
        }
        Ok(())
    }
}
