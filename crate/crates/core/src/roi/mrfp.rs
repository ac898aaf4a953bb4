//! Multi-level RoI fusion pooling.
//!
//! A RoI is pooled twice: from the high-level map at `high_pooled`, and from
//! the low-level map (twice the resolution) at twice that size. The low crop
//! goes through a neck that halves its spatial size and maps its channels
//! onto the high-level channel count; the two crops are then summed
//! elementwise.

use serde::{Deserialize, Serialize};

use super::align::{roi_align_batch, roi_align_batch_backward, AlignSpec};
use super::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MrfpConfig {
    /// `(h, w)` of the high-level crop, which is also the fused output size.
    pub high_pooled: (usize, usize),
    pub low_pooled: (usize, usize),
    pub high_stride: usize,
    pub low_stride: usize,
    pub sampling: usize,
}

impl MrfpConfig {
    /// Builds a config whose low level has twice the resolution of the high
    /// level.
    pub fn new(high_pooled: (usize, usize), high_stride: usize) -> Result<Self> {
        let cfg = MrfpConfig {
            high_pooled,
            low_pooled: (high_pooled.0 * 2, high_pooled.1 * 2),
            high_stride,
            low_stride: high_stride / 2,
            sampling: 2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.high_pooled.0 == 0 || self.high_pooled.1 == 0 {
            return Err(Error::invalid("mrfp", "empty pooled size"));
        }
        if self.low_pooled != (2 * self.high_pooled.0, 2 * self.high_pooled.1) {
            return Err(Error::invalid(
                "mrfp",
                format!(
                    "low pooled {:?} must be twice high pooled {:?}",
                    self.low_pooled, self.high_pooled
                ),
            ));
        }
        if self.high_stride < 2 || !self.high_stride.is_multiple_of(2) || self.low_stride * 2 != self.high_stride {
            return Err(Error::invalid(
                "mrfp",
                format!(
                    "low stride {} must be half of high stride {}",
                    self.low_stride, self.high_stride
                ),
            ));
        }
        Ok(())
    }

    pub fn high_spec(&self) -> AlignSpec {
        AlignSpec::new(self.high_pooled.0, self.high_pooled.1, self.high_stride).with_sampling(self.sampling)
    }

    pub fn low_spec(&self) -> AlignSpec {
        AlignSpec::new(self.low_pooled.0, self.low_pooled.1, self.low_stride).with_sampling(self.sampling)
    }
}

/// The transform applied to low-level crops before fusion.
pub trait Neck {
    type Cache;
    /// Gradient accumulator for the neck's own parameters.
    type Grad;

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Self::Cache)>;

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the neck input.
    fn backward(&self, cache: &Self::Cache, grad_out: &Tensor, grad: &mut Self::Grad) -> Result<Tensor>;
}

#[derive(Debug)]
pub struct MrfpCache<C> {
    rois: Vec<(usize, BBox)>,
    neck: C,
}

/// Fused RoI features for RoIs drawn from several images. `levels[i]` holds
/// the `(low, high)` feature maps of image `i`, each C×H×W.
pub fn mrfp<N: Neck>(
    levels: &[(&Tensor, &Tensor)],
    rois: &[(usize, BBox)],
    neck: &N,
    config: &MrfpConfig,
) -> Result<(Tensor, MrfpCache<N::Cache>)> {
    config.validate()?;
    let lows: Vec<&Tensor> = levels.iter().map(|l| l.0).collect();
    let highs: Vec<&Tensor> = levels.iter().map(|l| l.1).collect();
    let high = roi_align_batch(&highs, rois, &config.high_spec())?;
    let low = roi_align_batch(&lows, rois, &config.low_spec())?;
    let (necked, neck_cache) = neck.forward(&low)?;
    if necked.shape() != high.shape() {
        return Err(Error::shape(
            "mrfp",
            format!(
                "neck maps low crop to {:?} but high crop is {:?}",
                necked.shape(),
                high.shape()
            ),
        ));
    }
    let fused = high.add(&necked)?;
    Ok((
        fused,
        MrfpCache {
            rois: rois.to_vec(),
            neck: neck_cache,
        },
    ))
}

/// Accumulates gradients into the per-image low and high feature-map
/// gradients and into the neck gradient.
pub fn mrfp_backward<N: Neck>(
    grad_out: &Tensor,
    cache: &MrfpCache<N::Cache>,
    neck: &N,
    neck_grad: &mut N::Grad,
    config: &MrfpConfig,
    grad_lows: &mut [Tensor],
    grad_highs: &mut [Tensor],
) -> Result<()> {
    roi_align_batch_backward(grad_out, &cache.rois, &config.high_spec(), grad_highs)?;
    let grad_low_crop = neck.backward(&cache.neck, grad_out, neck_grad)?;
    roi_align_batch_backward(&grad_low_crop, &cache.rois, &config.low_spec(), grad_lows)?;
    Ok(())
}

/// Single-level pooling: the high-level crop alone.
pub fn single_level(highs: &[&Tensor], rois: &[(usize, BBox)], config: &MrfpConfig) -> Result<Tensor> {
    roi_align_batch(highs, rois, &config.high_spec())
}

pub fn single_level_backward(
    grad_out: &Tensor,
    rois: &[(usize, BBox)],
    config: &MrfpConfig,
    grad_highs: &mut [Tensor],
) -> Result<()> {
    roi_align_batch_backward(grad_out, rois, &config.high_spec(), grad_highs)
}


#[cfg(test)]
mod tests {
    use super::testing::AvgNeck;
    use super::*;

    #[test]
    fn config_enforces_two_to_one() {
        assert!(MrfpConfig::new((8, 4), 8).is_ok());
        let mut bad = MrfpConfig::new((8, 4), 8).unwrap();
        bad.low_pooled = (16, 9);
        assert!(bad.validate().is_err());
        let mut bad_stride = MrfpConfig::new((8, 4), 8).unwrap();
        bad_stride.low_stride = 2;
        assert!(bad_stride.validate().is_err());
    }

    #[test]
    fn desk_scale_output_shape() {
        let cfg = MrfpConfig::new((8, 4), 8).unwrap();
        assert_eq!(cfg.low_pooled, (16, 8));
        let low = Tensor::from_fn(&[3, 24, 16], |i| (i % 13) as f64 * 0.1);
        let high = Tensor::from_fn(&[6, 12, 8], |i| (i % 7) as f64 * 0.2);
        let rois = [(0, BBox::new(8.0, 4.0, 40.0, 80.0))];
        let (out, _) = mrfp(&[(&low, &high)], &rois, &AvgNeck { factor: 2 }, &cfg).unwrap();
        assert_eq!(out.shape(), &[1, 6, 8, 4]);
    }

    #[test]
    fn equal_branches_double_the_high_crop() {
        // A low map that is the nearest-neighbour upsampling of the high map,
        // pooled with one sample per bin at native resolution, averages back
        // to the high crop exactly.
        let cfg = MrfpConfig {
            sampling: 1,
            ..MrfpConfig::new((4, 2), 8).unwrap()
        };
        let high = Tensor::from_fn(&[2, 4, 2], |i| i as f64 * 0.3 - 1.0);
        let mut low = Tensor::zeros(&[2, 8, 4]);
        for c in 0..2 {
            for y in 0..8 {
                for x in 0..4 {
                    low.set(&[c, y, x], high.get(&[c, y / 2, x / 2]));
                }
            }
        }
        let rois = [(0, BBox::new(0.0, 0.0, 16.0, 32.0))];
        let (out, _) = mrfp(&[(&low, &high)], &rois, &AvgNeck { factor: 1 }, &cfg).unwrap();
        let high_crop = single_level(&[&high], &rois, &cfg).unwrap();
        for (o, h) in out.data().iter().zip(high_crop.data()) {
            assert!((o - 2.0 * h).abs() < 1e-12);
        }
    }

    #[test]
    fn neck_shape_mismatch_rejected() {
        let cfg = MrfpConfig::new((4, 2), 8).unwrap();
        let low = Tensor::zeros(&[3, 8, 4]);
        let high = Tensor::zeros(&[5, 4, 2]);
        let rois = [(0, BBox::new(0.0, 0.0, 16.0, 32.0))];
        let err = mrfp(&[(&low, &high)], &rois, &AvgNeck { factor: 1 }, &cfg).unwrap_err();
        assert!(err.to_string().contains("neck"));
    }
}
