//! RoI Align: quantization-free bilinear pooling of a box onto a fixed grid.
//!
//! Feature cell `(i, j)` covers image area `[j·s, (j+1)·s) × [i·s, (i+1)·s)`
//! and its value sits at the cell centre, so a box in image coordinates maps
//! to feature coordinates as `v / s - 0.5`. Each output bin averages a
//! `sampling × sampling` grid of bilinear samples. Samples farther than one
//! cell outside the map read as 0; samples within that margin are clamped
//! onto the border.

use super::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AlignSpec {
    pub pooled_h: usize,
    pub pooled_w: usize,
    pub stride: usize,
    pub sampling: usize,
}

impl AlignSpec {
    pub fn new(pooled_h: usize, pooled_w: usize, stride: usize) -> Self {
        AlignSpec {
            pooled_h,
            pooled_w,
            stride,
            sampling: 2,
        }
    }

    pub fn with_sampling(mut self, sampling: usize) -> Self {
        self.sampling = sampling;
        self
    }
}

/// Sparse bilinear weights for one RoI: for every output bin, the list of
/// `(plane offset, weight)` pairs whose weighted sum is the bin value.
#[derive(Clone, Debug)]
pub struct AlignWeights {
    bins: Vec<Vec<(usize, f64)>>,
}

impl AlignWeights {
    pub fn compute(feat_h: usize, feat_w: usize, roi: &BBox, spec: &AlignSpec) -> Result<Self> {
        if spec.pooled_h == 0 || spec.pooled_w == 0 || spec.stride == 0 || spec.sampling == 0 {
            return Err(Error::invalid("roi_align", format!("degenerate spec {spec:?}")));
        }
        let scale = 1.0 / spec.stride as f64;
        let start_x = roi.x1 * scale - 0.5;
        let start_y = roi.y1 * scale - 0.5;
        let bin_w = (roi.x2 * scale - 0.5 - start_x) / spec.pooled_w as f64;
        let bin_h = (roi.y2 * scale - 0.5 - start_y) / spec.pooled_h as f64;
        let grid = spec.sampling;
        let inv_count = 1.0 / (grid * grid) as f64;
        let mut bins = Vec::with_capacity(spec.pooled_h * spec.pooled_w);
        for py in 0..spec.pooled_h {
            for px in 0..spec.pooled_w {
                let mut taps: Vec<(usize, f64)> = Vec::with_capacity(4 * grid * grid);
                for iy in 0..grid {
                    let y = start_y + py as f64 * bin_h + (iy as f64 + 0.5) * bin_h / grid as f64;
                    for ix in 0..grid {
                        let x = start_x + px as f64 * bin_w + (ix as f64 + 0.5) * bin_w / grid as f64;
                        bilinear_taps(feat_h, feat_w, y, x, inv_count, &mut taps);
                    }
                }
                bins.push(taps);
            }
        }
        Ok(AlignWeights { bins })
    }

    /// Pools every channel of a C×H×W map into `out` (C × bins).
    fn apply(&self, features: &[f64], channels: usize, plane: usize, out: &mut [f64]) {
        let nb = self.bins.len();
        for c in 0..channels {
            let src = &features[c * plane..(c + 1) * plane];
            for (b, taps) in self.bins.iter().enumerate() {
                out[c * nb + b] = taps.iter().map(|&(o, w)| src[o] * w).sum();
            }
        }
    }

    fn scatter(&self, grad_out: &[f64], channels: usize, plane: usize, grad: &mut [f64]) {
        let nb = self.bins.len();
        for c in 0..channels {
            let dst = &mut grad[c * plane..(c + 1) * plane];
            for (b, taps) in self.bins.iter().enumerate() {
                let g = grad_out[c * nb + b];
                if g == 0.0 {
                    continue;
                }
                for &(o, w) in taps {
                    dst[o] += g * w;
                }
            }
        }
    }
}

fn bilinear_taps(h: usize, w: usize, y: f64, x: f64, weight: f64, taps: &mut Vec<(usize, f64)>) {
    if y < -1.0 || y > h as f64 || x < -1.0 || x > w as f64 {
        return;
    }
    let (mut y, mut x) = (y.max(0.0), x.max(0.0));
    let mut y_low = y.floor() as usize;
    let y_high;
    if y_low >= h - 1 {
        y_low = h - 1;
        y_high = h - 1;
        y = y_low as f64;
    } else {
        y_high = y_low + 1;
    }
    let mut x_low = x.floor() as usize;
    let x_high;
    if x_low >= w - 1 {
        x_low = w - 1;
        x_high = w - 1;
        x = x_low as f64;
    } else {
        x_high = x_low + 1;
    }
    let ly = y - y_low as f64;
    let lx = x - x_low as f64;
    let (hy, hx) = (1.0 - ly, 1.0 - lx);
    taps.push((y_low * w + x_low, weight * hy * hx));
    taps.push((y_low * w + x_high, weight * hy * lx));
    taps.push((y_high * w + x_low, weight * ly * hx));
    taps.push((y_high * w + x_high, weight * ly * lx));
}

/// Pools `roi` from a C×H×W feature map into C×pooled_h×pooled_w.
pub fn roi_align(features: &Tensor, roi: &BBox, spec: &AlignSpec) -> Result<Tensor> {
    let (c, h, w) = features.dims3("roi_align")?;
    let weights = AlignWeights::compute(h, w, roi, spec)?;
    let mut out = vec![0.0; c * spec.pooled_h * spec.pooled_w];
    weights.apply(features.data(), c, h * w, &mut out);
    Tensor::new(&[c, spec.pooled_h, spec.pooled_w], out)
}

/// Gradient of [`roi_align`] with respect to the feature map, accumulated
/// into `grad_features`.
pub fn roi_align_backward(grad_out: &Tensor, roi: &BBox, spec: &AlignSpec, grad_features: &mut Tensor) -> Result<()> {
    let (c, h, w) = grad_features.dims3("roi_align_backward")?;
    if grad_out.shape() != [c, spec.pooled_h, spec.pooled_w] {
        return Err(Error::shape(
            "roi_align_backward",
            format!("grad_out {:?} for {c} channels", grad_out.shape()),
        ));
    }
    let weights = AlignWeights::compute(h, w, roi, spec)?;
    weights.scatter(grad_out.data(), c, h * w, grad_features.data_mut());
    Ok(())
}

/// Pools a batch of RoIs, each drawn from one of several feature maps
/// (`rois[i].0` indexes `maps`). Output is N×C×h×w.
pub fn roi_align_batch(maps: &[&Tensor], rois: &[(usize, BBox)], spec: &AlignSpec) -> Result<Tensor> {
    if rois.is_empty() {
        return Err(Error::invalid("roi_align_batch", "no RoIs"));
    }
    let (c, _, _) = maps
        .first()
        .ok_or_else(|| Error::invalid("roi_align_batch", "no feature maps"))?
        .dims3("roi_align_batch")?;
    let per = c * spec.pooled_h * spec.pooled_w;
    let mut out = vec![0.0; rois.len() * per];
    for (i, (img, roi)) in rois.iter().enumerate() {
        let fm = maps
            .get(*img)
            .ok_or_else(|| Error::invalid("roi_align_batch", format!("image index {img}")))?;
        let (fc, h, w) = fm.dims3("roi_align_batch")?;
        if fc != c {
            return Err(Error::shape("roi_align_batch", "feature maps differ in channels"));
        }
        let weights = AlignWeights::compute(h, w, roi, spec)?;
        weights.apply(fm.data(), c, h * w, &mut out[i * per..(i + 1) * per]);
    }
    Tensor::new(&[rois.len(), c, spec.pooled_h, spec.pooled_w], out)
}

pub fn roi_align_batch_backward(
    grad_out: &Tensor,
    rois: &[(usize, BBox)],
    spec: &AlignSpec,
    grad_maps: &mut [Tensor],
) -> Result<()> {
    let (n, c, ph, pw) = grad_out.dims4("roi_align_batch_backward")?;
    if n != rois.len() || ph != spec.pooled_h || pw != spec.pooled_w {
        return Err(Error::shape(
            "roi_align_batch_backward",
            format!("grad_out {:?} for {} RoIs", grad_out.shape(), rois.len()),
        ));
    }
    let per = c * ph * pw;
    for (i, (img, roi)) in rois.iter().enumerate() {
        let gm = grad_maps
            .get_mut(*img)
            .ok_or_else(|| Error::invalid("roi_align_batch_backward", format!("image index {img}")))?;
        let (_, h, w) = gm.dims3("roi_align_batch_backward")?;
        let weights = AlignWeights::compute(h, w, roi, spec)?;
        weights.scatter(&grad_out.data()[i * per..(i + 1) * per], c, h * w, gm.data_mut());
    }
    Ok(())
}
