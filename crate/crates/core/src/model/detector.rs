//! Region proposal network, box head, and their training-target assignment.

use rand::seq::SliceRandom;
use rand::Rng;

use super::config::{RoiConfig, RpnConfig};
use super::layers::{prefixed, prefixed_mut, Conv, Init, Linear, Module};
use crate::error::Result;
use crate::roi::{clamp_delta, decode_box, encode_box, iou, nms, BBox};
use crate::tensor::{relu, relu_backward, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct RpnHead {
    pub conv: Conv,
    pub cls: Conv,
    pub reg: Conv,
}

pub struct RpnCache {
    input: Tensor,
    hidden: Tensor,
    dims: (usize, usize, usize),
}

/// Per-anchor RPN outputs for a batch, location-major within each image.
pub struct RpnOutput {
    /// `N · anchors_per_image` objectness logits.
    pub logits: Tensor,
    /// `(N · anchors_per_image) × 4` box deltas.
    pub deltas: Tensor,
    pub anchors_per_image: usize,
    pub cache: RpnCache,
}

impl RpnHead {
    pub fn new<R: Rng>(channels: usize, anchors: usize, rng: &mut R) -> Self {
        RpnHead {
            conv: Conv::new(channels, channels, 3, 1, 1, true, Init::FanIn, rng),
            cls: Conv::new(channels, anchors, 1, 1, 0, true, Init::FanIn, rng),
            reg: Conv::new(channels, 4 * anchors, 1, 1, 0, true, Init::FanIn, rng),
        }
    }

    pub fn anchors(&self) -> usize {
        self.cls.out_channels()
    }

    pub fn forward(&self, high: &Tensor) -> Result<RpnOutput> {
        let (n, _, h, w) = high.dims4("rpn")?;
        let a = self.anchors();
        let hidden = relu(&self.conv.forward(high)?);
        let cls = self.cls.forward(&hidden)?;
        let reg = self.reg.forward(&hidden)?;
        let per = h * w * a;
        let mut logits = vec![0.0; n * per];
        let mut deltas = vec![0.0; n * per * 4];
        let plane = h * w;
        for i in 0..n {
            for k in 0..a {
                for p in 0..plane {
                    let idx = i * per + p * a + k;
                    logits[idx] = cls.data()[(i * a + k) * plane + p];
                    for j in 0..4 {
                        deltas[idx * 4 + j] = reg.data()[(i * 4 * a + k * 4 + j) * plane + p];
                    }
                }
            }
        }
        Ok(RpnOutput {
            logits: Tensor::new(&[n * per], logits)?,
            deltas: Tensor::new(&[n * per, 4], deltas)?,
            anchors_per_image: per,
            cache: RpnCache {
                input: high.clone(),
                hidden,
                dims: (n, h, w),
            },
        })
    }

    /// Gradient with respect to the high-level features.
    pub fn backward(
        &self,
        cache: &RpnCache,
        grad_logits: &Tensor,
        grad_deltas: &Tensor,
        grad: &mut RpnHead,
    ) -> Result<Tensor> {
        let (n, h, w) = cache.dims;
        let a = self.anchors();
        let plane = h * w;
        let per = plane * a;
        let mut gcls = vec![0.0; n * a * plane];
        let mut greg = vec![0.0; n * 4 * a * plane];
        for i in 0..n {
            for k in 0..a {
                for p in 0..plane {
                    let idx = i * per + p * a + k;
                    gcls[(i * a + k) * plane + p] = grad_logits.data()[idx];
                    for j in 0..4 {
                        greg[(i * 4 * a + k * 4 + j) * plane + p] = grad_deltas.data()[idx * 4 + j];
                    }
                }
            }
        }
        let gcls = Tensor::new(&[n, a, h, w], gcls)?;
        let greg = Tensor::new(&[n, 4 * a, h, w], greg)?;
        let mut gh = self.cls.backward(&cache.hidden, &gcls, &mut grad.cls)?;
        gh.add_assign(&self.reg.backward(&cache.hidden, &greg, &mut grad.reg)?)?;
        let gz = relu_backward(&cache.hidden, &gh);
        self.conv.backward(&cache.input, &gz, &mut grad.conv)
    }
}

impl Module for RpnHead {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("conv", self.conv.params());
        v.extend(prefixed("cls", self.cls.params()));
        v.extend(prefixed("reg", self.reg.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = prefixed_mut("conv", self.conv.params_mut());
        v.extend(prefixed_mut("cls", self.cls.params_mut()));
        v.extend(prefixed_mut("reg", self.reg.params_mut()));
        v
    }
}

/// Two hidden FC layers, then person/background logits and class-agnostic
/// box deltas.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiHead {
    pub fc1: Linear,
    pub fc2: Linear,
    pub cls: Linear,
    pub reg: Linear,
}

pub struct RoiHeadCache {
    input_shape: Vec<usize>,
    flat: Tensor,
    h1: Tensor,
    h2: Tensor,
}

impl RoiHead {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        RoiHead {
            fc1: Linear::new(input, hidden, true, Init::FanIn, rng),
            fc2: Linear::new(hidden, hidden, true, Init::FanIn, rng),
            cls: Linear::new(hidden, 2, true, Init::FanIn, rng),
            reg: Linear::new(hidden, 4, true, Init::FanIn, rng),
        }
    }

    /// R×C×h×w pooled features to `(R×2 logits, R×4 deltas)`.
    pub fn forward(&self, pooled: &Tensor) -> Result<(Tensor, Tensor, RoiHeadCache)> {
        let r = pooled.shape()[0];
        let flat = pooled.clone().reshape(&[r, pooled.len() / r])?;
        let h1 = relu(&self.fc1.forward(&flat)?);
        let h2 = relu(&self.fc2.forward(&h1)?);
        let logits = self.cls.forward(&h2)?;
        let deltas = self.reg.forward(&h2)?;
        Ok((
            logits,
            deltas,
            RoiHeadCache {
                input_shape: pooled.shape().to_vec(),
                flat,
                h1,
                h2,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &RoiHeadCache,
        grad_logits: &Tensor,
        grad_deltas: &Tensor,
        grad: &mut RoiHead,
    ) -> Result<Tensor> {
        let mut g2 = self.cls.backward(&cache.h2, grad_logits, &mut grad.cls)?;
        g2.add_assign(&self.reg.backward(&cache.h2, grad_deltas, &mut grad.reg)?)?;
        let g1 = self
            .fc2
            .backward(&cache.h1, &relu_backward(&cache.h2, &g2), &mut grad.fc2)?;
        let gf = self
            .fc1
            .backward(&cache.flat, &relu_backward(&cache.h1, &g1), &mut grad.fc1)?;
        gf.reshape(&cache.input_shape)
    }
}

impl Module for RoiHead {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("fc1", self.fc1.params());
        v.extend(prefixed("fc2", self.fc2.params()));
        v.extend(prefixed("cls", self.cls.params()));
        v.extend(prefixed("reg", self.reg.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = prefixed_mut("fc1", self.fc1.params_mut());
        v.extend(prefixed_mut("fc2", self.fc2.params_mut()));
        v.extend(prefixed_mut("cls", self.cls.params_mut()));
        v.extend(prefixed_mut("reg", self.reg.params_mut()));
        v
    }
}

/// Best IoU and its ground-truth index for every box.
fn best_match(boxes: &[BBox], gts: &[BBox]) -> Vec<(f64, Option<usize>)> {
    boxes
        .iter()
        .map(|b| {
            let mut best = (0.0, None);
            for (g, gt) in gts.iter().enumerate() {
                let v = iou(b, gt);
                if v > best.0 {
                    best = (v, Some(g));
                }
            }
            best
        })
        .collect()
}

/// `(anchor, is_foreground)` samples and `(anchor, deltas)` regression
/// targets.
pub type RpnTargets = (Vec<(usize, bool)>, Vec<(usize, [f64; 4])>);

/// Objectness samples `(anchor, is_foreground)` and regression targets for
/// the positive ones. Anchors at or above `positive_iou`, plus the best
/// anchors of every ground truth, are positive; anchors below
/// `negative_iou` are negative.
pub fn assign_rpn_targets<R: Rng>(anchors: &[BBox], gts: &[BBox], cfg: &RpnConfig, rng: &mut R) -> Result<RpnTargets> {
    let matches = best_match(anchors, gts);
    // 1 positive, 0 negative, -1 ignored
    let mut label: Vec<i8> = matches
        .iter()
        .map(|&(v, _)| {
            if v >= cfg.positive_iou {
                1
            } else if v < cfg.negative_iou {
                0
            } else {
                -1
            }
        })
        .collect();
    let mut forced = vec![None; anchors.len()];
    for (g, gt) in gts.iter().enumerate() {
        let ious: Vec<f64> = anchors.iter().map(|a| iou(a, gt)).collect();
        let top = ious.iter().copied().fold(0.0, f64::max);
        if top <= 0.0 {
            continue;
        }
        for (i, &v) in ious.iter().enumerate() {
            if v == top {
                label[i] = 1;
                forced[i].get_or_insert(g);
            }
        }
    }
    let mut pos: Vec<usize> = (0..anchors.len()).filter(|&i| label[i] == 1).collect();
    let mut neg: Vec<usize> = (0..anchors.len()).filter(|&i| label[i] == 0).collect();
    let max_pos = (cfg.batch_per_image as f64 * cfg.positive_fraction) as usize;
    pos.shuffle(rng);
    pos.truncate(max_pos);
    pos.sort_unstable();
    neg.shuffle(rng);
    neg.truncate(cfg.batch_per_image - pos.len());
    neg.sort_unstable();
    let mut samples: Vec<(usize, bool)> = pos.iter().map(|&i| (i, true)).collect();
    samples.extend(neg.iter().map(|&i| (i, false)));
    let mut reg = Vec::with_capacity(pos.len());
    for &i in &pos {
        let g = matches[i]
            .1
            .or(forced[i])
            .expect("positive anchor overlaps a ground truth");
        reg.push((i, encode_box(&gts[g], &anchors[i])?));
    }
    Ok((samples, reg))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Decoded, clipped, NMS-filtered proposals of one image, scored by
/// objectness probability.
pub fn propose(
    logits: &[f64],
    deltas: &[f64],
    anchors: &[BBox],
    width: f64,
    height: f64,
    cfg: &RpnConfig,
) -> Result<Vec<BBox>> {
    let mut order: Vec<usize> = (0..anchors.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(cfg.pre_nms_top_n);
    let mut boxes = Vec::with_capacity(order.len());
    for &i in &order {
        let d = clamp_delta(&[deltas[4 * i], deltas[4 * i + 1], deltas[4 * i + 2], deltas[4 * i + 3]]);
        let b = decode_box(&d, &anchors[i])?.clip(width, height);
        if b.width() >= 2.0 && b.height() >= 2.0 {
            boxes.push(b.with_score(sigmoid(logits[i])));
        }
    }
    let keep = nms(&boxes, cfg.nms_iou);
    Ok(keep.into_iter().take(cfg.post_nms_top_n).map(|i| boxes[i]).collect())
}

/// Proposals sampled for the box head of one image.
#[derive(Clone, Debug, Default)]
pub struct RoiSamples {
    pub boxes: Vec<BBox>,
    pub foreground: Vec<bool>,
    /// Regression target of every foreground sample.
    pub targets: Vec<Option<[f64; 4]>>,
    /// Matched ground truth and IoU of every sample.
    pub matched: Vec<(Option<usize>, f64)>,
}

pub fn sample_rois<R: Rng>(proposals: &[BBox], gts: &[BBox], cfg: &RoiConfig, rng: &mut R) -> Result<RoiSamples> {
    let mut candidates: Vec<BBox> = proposals.to_vec();
    candidates.extend(gts.iter().map(|g| BBox { score: Some(1.0), ..*g }));
    let matches = best_match(&candidates, gts);
    let mut fg: Vec<usize> = (0..candidates.len())
        .filter(|&i| matches[i].0 >= cfg.foreground_iou)
        .collect();
    let mut bg: Vec<usize> = (0..candidates.len())
        .filter(|&i| matches[i].0 < cfg.foreground_iou)
        .collect();
    let max_fg = (cfg.batch_per_image as f64 * cfg.foreground_fraction).round() as usize;
    fg.shuffle(rng);
    fg.truncate(max_fg);
    bg.shuffle(rng);
    bg.truncate(cfg.batch_per_image - fg.len());
    let mut out = RoiSamples::default();
    for (&i, is_fg) in fg.iter().map(|i| (i, true)).chain(bg.iter().map(|i| (i, false))) {
        let b = candidates[i];
        out.boxes.push(b);
        out.foreground.push(is_fg);
        out.matched.push((matches[i].1, matches[i].0));
        out.targets.push(if is_fg {
            let g = matches[i].1.expect("foreground has a match");
            Some(encode_box(&gts[g], &b)?)
        } else {
            None
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roi::generate_anchors;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn twelve_anchor_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = RpnHead::new(8, RpnConfig::default().anchors_per_location(), &mut rng);
        let out = head.forward(&Tensor::zeros(&[2, 8, 3, 4])).unwrap();
        assert_eq!(out.anchors_per_image, 3 * 4 * 12);
        assert_eq!(out.deltas.shape(), &[2 * 144, 4]);
    }

    #[test]
    fn every_gt_gets_a_positive_anchor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = RpnConfig::default();
        let anchors = generate_anchors(8, 12, 8, &cfg.anchor_sizes, &cfg.anchor_ratios);
        let gts = [BBox::new(10.0, 5.0, 26.0, 45.0), BBox::new(60.0, 20.0, 78.0, 60.0)];
        let (samples, reg) = assign_rpn_targets(&anchors, &gts, &cfg, &mut rng).unwrap();
        assert!(samples.len() <= 256);
        let pos: Vec<usize> = samples.iter().filter(|s| s.1).map(|s| s.0).collect();
        assert_eq!(pos.len(), reg.len());
        for gt in &gts {
            assert!(pos.iter().any(|&i| iou(&anchors[i], gt) > 0.3));
        }
    }

    #[test]
    fn proposals_inside_image() {
        let cfg = RpnConfig::default();
        let anchors = generate_anchors(2, 3, 8, &cfg.anchor_sizes, &cfg.anchor_ratios);
        let logits: Vec<f64> = (0..anchors.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let deltas: Vec<f64> = (0..anchors.len() * 4).map(|i| (i as f64 * 0.11).cos()).collect();
        for b in propose(&logits, &deltas, &anchors, 24.0, 16.0, &cfg).unwrap() {
            assert!(b.is_within(24.0, 16.0));
        }
    }

    #[test]
    fn gt_boxes_join_roi_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gts = [BBox::new(10.0, 5.0, 26.0, 45.0)];
        let s = sample_rois(&[BBox::new(0.0, 0.0, 5.0, 5.0)], &gts, &RoiConfig::default(), &mut rng).unwrap();
        assert_eq!(s.boxes.len(), 2);
        assert_eq!(s.foreground.iter().filter(|&&f| f).count(), 1);
        assert_eq!(s.targets.iter().flatten().next().unwrap(), &[0.0; 4]);
    }
}
