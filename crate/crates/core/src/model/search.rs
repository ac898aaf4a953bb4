use rand::Rng;

use super::backbone::{Backbone, EmbedHead};
use super::config::{PoolingMode, SearchConfig};
use super::detector::{assign_rpn_targets, propose, sample_rois, RoiHead, RpnHead};
use super::layers::{prefixed, prefixed_mut, Conv, Init, Module};
use crate::data::SceneSample;
use crate::error::{Error, Result};
use crate::losses::{detection_loss, DetectionTargets, IdLoss, LossReport};
use crate::roi::{
    clamp_delta, decode_box, generate_anchors, mrfp, mrfp_backward, nms, roi_align_batch, roi_align_batch_backward,
    single_level, single_level_backward, AlignSpec, BBox, MrfpCache, Neck,
};
use crate::tensor::{relu, relu_backward, BnMode, Tensor};

/// One-step person search model: shared base network, RPN and box head on
/// the high-level map, and an identification branch over (optionally
/// fused) RoI features.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchModel {
    pub config: SearchConfig,
    pub backbone: Backbone,
    /// Maps low-level crops onto the high-level crop shape; shaped like S3
    /// but never sharing its storage.
    pub neck: Conv,
    pub rpn: RpnHead,
    pub roi_head: RoiHead,
    pub embed: EmbedHead,
}

/// The MRFP neck: a strided conv followed by ReLU.
pub struct ConvNeck<'a>(pub &'a Conv);

impl Neck for ConvNeck<'_> {
    type Cache = (Tensor, Tensor);
    type Grad = Conv;

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Self::Cache)> {
        let y = relu(&self.0.forward(x)?);
        Ok((y.clone(), (x.clone(), y)))
    }

    fn backward(&self, cache: &Self::Cache, grad_out: &Tensor, grad: &mut Conv) -> Result<Tensor> {
        let gz = relu_backward(&cache.1, grad_out);
        self.0.backward(&cache.0, &gz, grad)
    }
}

enum IdPoolCache {
    Single,
    Mrfp(MrfpCache<(Tensor, Tensor)>),
}

/// Per-step knobs of the fine-tuning objective.
#[derive(Clone, Copy, Debug)]
pub struct StepOptions<'a> {
    pub id_loss: IdLoss,
    /// Weight of the identity term; 0 trains the detector alone.
    pub id_weight: f64,
    /// Training instances per identity, for re-weighted identity losses.
    pub class_counts: &'a [usize],
}

pub(crate) fn split_batch(t: &Tensor) -> Vec<Tensor> {
    let shape = &t.shape()[1..];
    (0..t.shape()[0])
        .map(|i| Tensor::new(shape, t.row(i).to_vec()).expect("row matches shape"))
        .collect()
}

fn softmax_fg(logits: &[f64]) -> f64 {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    e1 / (e0 + e1)
}

impl SearchModel {
    pub fn new<R: Rng>(config: SearchConfig, classes: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let spec = config.backbone;
        let backbone = Backbone::new(spec, rng)?;
        let neck = Conv::new(
            spec.low_channels(),
            spec.high_channels(),
            3,
            2,
            1,
            spec.bias,
            Init::He,
            rng,
        );
        let rpn = RpnHead::new(spec.high_channels(), config.rpn.anchors_per_location(), rng);
        let (ph, pw) = config.roi.pooled;
        let roi_head = RoiHead::new(spec.high_channels() * ph * pw, config.roi.hidden, rng);
        let embed = EmbedHead::new(spec.embedding_dim(), classes, rng);
        Ok(SearchModel {
            config,
            backbone,
            neck,
            rpn,
            roi_head,
            embed,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.zero_grad();
        g
    }

    fn as_batch(image: &Tensor) -> Result<Tensor> {
        match image.rank() {
            3 => {
                let mut shape = vec![1];
                shape.extend_from_slice(image.shape());
                image.clone().reshape(&shape)
            }
            4 => Ok(image.clone()),
            r => Err(Error::shape("search_model", format!("image of rank {r}"))),
        }
    }

    /// Low (S2) and high (S3) feature maps of a 3×H×W image or a batch.
    pub fn forward_base(&self, image: &Tensor) -> Result<(Tensor, Tensor)> {
        let (low, high, _) = self.backbone.forward_base(&Self::as_batch(image)?)?;
        Ok((low, high))
    }

    fn anchors_for(&self, h: usize, w: usize) -> Vec<BBox> {
        let r = &self.config.rpn;
        generate_anchors(
            h,
            w,
            self.config.backbone.high_stride(),
            &r.anchor_sizes,
            &r.anchor_ratios,
        )
    }

    fn box_spec(&self) -> AlignSpec {
        let (ph, pw) = self.config.roi.pooled;
        AlignSpec::new(ph, pw, self.config.backbone.high_stride()).with_sampling(self.config.sampling)
    }

    /// Scored person boxes from the high-level map of one image, clipped to
    /// the `width × height` image. Boxes below the configured minimum score
    /// are dropped; no foreground threshold is applied here.
    pub fn forward_detector(&self, high: &Tensor, width: f64, height: f64) -> Result<Vec<BBox>> {
        let high = Self::as_batch(high)?;
        let (_, _, h, w) = high.dims4("forward_detector")?;
        let out = self.rpn.forward(&high)?;
        let anchors = self.anchors_for(h, w);
        let proposals = propose(
            out.logits.data(),
            out.deltas.data(),
            &anchors,
            width,
            height,
            &self.config.rpn,
        )?;
        if proposals.is_empty() {
            return Ok(Vec::new());
        }
        let map = split_batch(&high).remove(0);
        let rois: Vec<(usize, BBox)> = proposals.iter().map(|b| (0, *b)).collect();
        let pooled = roi_align_batch(&[&map], &rois, &self.box_spec())?;
        let (logits, deltas, _) = self.roi_head.forward(&pooled)?;
        let mut dets = Vec::new();
        for (i, p) in proposals.iter().enumerate() {
            let score = softmax_fg(logits.row(i));
            if score < self.config.roi.min_score {
                continue;
            }
            let d = deltas.row(i);
            let b = decode_box(&clamp_delta(&[d[0], d[1], d[2], d[3]]), p)?.clip(width, height);
            if b.width() > 0.0 && b.height() > 0.0 {
                dets.push(BBox::new(b.x1, b.y1, b.x2, b.y2).with_score(score));
            }
        }
        let keep = nms(&dets, self.config.roi.detection_nms_iou);
        Ok(keep
            .into_iter()
            .take(self.config.roi.max_detections)
            .map(|i| dets[i])
            .collect())
    }

    fn pool_ident(&self, lows: &[Tensor], highs: &[Tensor], rois: &[(usize, BBox)]) -> Result<(Tensor, IdPoolCache)> {
        let cfg = self.config.mrfp();
        let high_refs: Vec<&Tensor> = highs.iter().collect();
        match self.config.pooling {
            PoolingMode::Single => Ok((single_level(&high_refs, rois, &cfg)?, IdPoolCache::Single)),
            PoolingMode::Mrfp => {
                let levels: Vec<(&Tensor, &Tensor)> = lows.iter().zip(highs).collect();
                let (out, cache) = mrfp(&levels, rois, &ConvNeck(&self.neck), &cfg)?;
                Ok((out, IdPoolCache::Mrfp(cache)))
            }
        }
    }

    /// Embeddings (running BN statistics) of `boxes` in one image.
    pub fn forward_identification(&self, low: &Tensor, high: &Tensor, boxes: &[BBox]) -> Result<Tensor> {
        if boxes.is_empty() {
            return Err(Error::invalid("forward_identification", "no boxes"));
        }
        let lows = split_batch(&Self::as_batch(low)?);
        let highs = split_batch(&Self::as_batch(high)?);
        let rois: Vec<(usize, BBox)> = boxes.iter().map(|b| (0, *b)).collect();
        let (pooled, _) = self.pool_ident(&lows, &highs, &rois)?;
        let (feat, _) = self.backbone.forward_ident(&pooled)?;
        self.embed.embed(&feat)
    }

    /// Detections of one scene image and their embeddings.
    pub fn detect_and_embed(&self, image: &Tensor) -> Result<(Vec<BBox>, Option<Tensor>)> {
        let (_, h, w) = image.dims3("detect_and_embed")?;
        let (low, high) = self.forward_base(image)?;
        let dets = self.forward_detector(&high, w as f64, h as f64)?;
        if dets.is_empty() {
            return Ok((dets, None));
        }
        let emb = self.forward_identification(&low, &high, &dets)?;
        Ok((dets, Some(emb)))
    }

    /// Embeddings of given boxes in one scene image.
    pub fn embed_boxes(&self, image: &Tensor, boxes: &[BBox]) -> Result<Tensor> {
        let (low, high) = self.forward_base(image)?;
        self.forward_identification(&low, &high, boxes)
    }

    /// Forward and backward of the joint objective on a batch of scenes.
    /// Gradients are accumulated into `grad`; BN running statistics of the
    /// embedding are updated.
    pub fn loss_and_grad<R: Rng>(
        &mut self,
        scenes: &[SceneSample],
        opts: &StepOptions,
        rng: &mut R,
        grad: &mut SearchModel,
    ) -> Result<LossReport> {
        let images: Vec<Tensor> = scenes.iter().map(|s| s.image.clone()).collect();
        let batch = Tensor::stack(&images)?;
        let (_, _, img_h, img_w) = batch.dims4("loss_and_grad")?;
        let (low, high, base_cache) = self.backbone.forward_base(&batch)?;
        let (_, _, fh, fw) = high.dims4("loss_and_grad")?;
        let lows = split_batch(&low);
        let highs = split_batch(&high);

        // Detector.
        let rpn_out = self.rpn.forward(&high)?;
        let per = rpn_out.anchors_per_image;
        let anchors = self.anchors_for(fh, fw);
        let mut targets = DetectionTargets::default();
        let mut box_rois: Vec<(usize, BBox)> = Vec::new();
        let mut id_rois: Vec<(usize, BBox)> = Vec::new();
        let mut id_labels: Vec<usize> = Vec::new();
        for (i, scene) in scenes.iter().enumerate() {
            let gts = &scene.instances;
            let (samples, reg) = assign_rpn_targets(&anchors, gts, &self.config.rpn, rng)?;
            targets
                .rpn_samples
                .extend(samples.into_iter().map(|(a, f)| (i * per + a, f)));
            targets.rpn_reg.extend(reg.into_iter().map(|(a, t)| (i * per + a, t)));
            let logits = &rpn_out.logits.data()[i * per..(i + 1) * per];
            let deltas = &rpn_out.deltas.data()[i * per * 4..(i + 1) * per * 4];
            let proposals = propose(logits, deltas, &anchors, img_w as f64, img_h as f64, &self.config.rpn)?;
            let sampled = sample_rois(&proposals, gts, &self.config.roi, rng)?;
            let mut extra = 0;
            for (k, b) in sampled.boxes.iter().enumerate() {
                let row = box_rois.len();
                box_rois.push((i, *b));
                targets.roi_labels.push(sampled.foreground[k]);
                if let Some(t) = sampled.targets[k] {
                    targets.roi_reg.push((row, t));
                }
                // Foreground proposals inherit the identity of their best
                // ground truth when that overlap exceeds 0.5.
                let (m, v) = sampled.matched[k];
                let is_gt = b.score == Some(1.0)
                    && gts
                        .iter()
                        .any(|g| g.x1 == b.x1 && g.y1 == b.y1 && g.x2 == b.x2 && g.y2 == b.y2);
                if extra < self.config.roi.id_proposals_per_image && v > 0.5 && !is_gt {
                    if let Some(id) = m.and_then(|g| gts[g].identity) {
                        id_rois.push((i, BBox::new(b.x1, b.y1, b.x2, b.y2)));
                        id_labels.push(id);
                        extra += 1;
                    }
                }
            }
            for g in gts {
                if let Some(id) = g.identity {
                    id_rois.push((i, BBox::new(g.x1, g.y1, g.x2, g.y2)));
                    id_labels.push(id);
                }
            }
        }
        let high_refs: Vec<&Tensor> = highs.iter().collect();
        let box_pooled = roi_align_batch(&high_refs, &box_rois, &self.box_spec())?;
        let (roi_logits, roi_deltas, roi_cache) = self.roi_head.forward(&box_pooled)?;
        let det = detection_loss(&rpn_out.logits, &rpn_out.deltas, &roi_logits, &roi_deltas, &targets)?;

        let mut grad_highs: Vec<Tensor> = highs.iter().map(Tensor::zeros_like).collect();
        let mut grad_lows: Vec<Tensor> = lows.iter().map(Tensor::zeros_like).collect();

        // Identification.
        let mut l_id = 0.0;
        if opts.id_weight > 0.0 && id_rois.len() >= 2 {
            let (pooled, pool_cache) = self.pool_ident(&lows, &highs, &id_rois)?;
            let (feat, ident_cache) = self.backbone.forward_ident(&pooled)?;
            let (_, logits, embed_cache) = self.embed.forward(&feat, BnMode::Train)?;
            let (raw, g_logits) = opts.id_loss.evaluate(&logits, &id_labels, opts.class_counts)?;
            l_id = opts.id_weight * raw;
            let g_logits = g_logits.scale(opts.id_weight);
            let g_feat = self
                .embed
                .backward(&embed_cache, None, Some(&g_logits), &mut grad.embed)?;
            let g_pooled = self
                .backbone
                .backward_ident(&ident_cache, &g_feat, &mut grad.backbone)?;
            let cfg = self.config.mrfp();
            match pool_cache {
                IdPoolCache::Single => single_level_backward(&g_pooled, &id_rois, &cfg, &mut grad_highs)?,
                IdPoolCache::Mrfp(cache) => mrfp_backward(
                    &g_pooled,
                    &cache,
                    &ConvNeck(&self.neck),
                    &mut grad.neck,
                    &cfg,
                    &mut grad_lows,
                    &mut grad_highs,
                )?,
            }
        }

        let g_box = self
            .roi_head
            .backward(&roi_cache, &det.grad_roi_cls, &det.grad_roi_reg, &mut grad.roi_head)?;
        roi_align_batch_backward(&g_box, &box_rois, &self.box_spec(), &mut grad_highs)?;
        let mut g_high = self
            .rpn
            .backward(&rpn_out.cache, &det.grad_rpn_cls, &det.grad_rpn_reg, &mut grad.rpn)?;
        g_high.add_assign(&Tensor::stack(&grad_highs)?)?;
        let g_low = Tensor::stack(&grad_lows)?;
        self.backbone
            .backward_base(&base_cache, Some(&g_low), Some(&g_high), &mut grad.backbone)?;

        Ok(LossReport::search(l_id, det.cls_rpn, det.reg_rpn, det.cls, det.reg))
    }
}

impl Module for SearchModel {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("backbone", self.backbone.params());
        v.extend(prefixed("neck", self.neck.params()));
        v.extend(prefixed("rpn", self.rpn.params()));
        v.extend(prefixed("roi_head", self.roi_head.params()));
        v.extend(prefixed("embed", self.embed.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = prefixed_mut("backbone", self.backbone.params_mut());
        v.extend(prefixed_mut("neck", self.neck.params_mut()));
        v.extend(prefixed_mut("rpn", self.rpn.params_mut()));
        v.extend(prefixed_mut("roi_head", self.roi_head.params_mut()));
        v.extend(prefixed_mut("embed", self.embed.params_mut()));
        v
    }

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        prefixed("embed", self.embed.buffers())
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        prefixed_mut("embed", self.embed.buffers_mut())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, DatasetConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_data() -> crate::data::Dataset {
        generate_dataset(&DatasetConfig {
            num_identities: 6,
            test_identities: 4,
            scenes: 4,
            test_scenes: 4,
            ..DatasetConfig::default()
        })
        .unwrap()
    }

    fn model(pooling: PoolingMode, seed: u64) -> SearchModel {
        let cfg = SearchConfig {
            pooling,
            ..SearchConfig::default()
        };
        SearchModel::new(cfg, 6, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn feature_strides() {
        let m = model(PoolingMode::Mrfp, 0);
        let (low, high) = m.forward_base(&Tensor::zeros(&[3, 64, 48])).unwrap();
        assert_eq!(low.shape(), &[1, 16, 16, 12]);
        assert_eq!(high.shape(), &[1, 32, 8, 6]);
    }

    #[test]
    fn random_detections_inside_image() {
        let data = small_data();
        let m = model(PoolingMode::Mrfp, 1);
        for scene in &data.test {
            let (_, high) = m.forward_base(&scene.image).unwrap();
            let dets = m.forward_detector(&high, 96.0, 64.0).unwrap();
            assert!(dets.len() <= m.config.roi.max_detections);
            for d in dets {
                assert!(d.is_within(96.0, 64.0), "{d:?}");
                assert!(d.score.unwrap() >= m.config.roi.min_score);
            }
        }
    }

    #[test]
    fn duplicate_boxes_give_identical_rows() {
        let data = small_data();
        let m = model(PoolingMode::Mrfp, 2);
        let b = data.test[0].instances[0];
        let e = m.embed_boxes(&data.test[0].image, &[b, b]).unwrap();
        assert_eq!(e.shape(), &[2, 64]);
        assert_eq!(e.row(0), e.row(1));
    }

    #[test]
    fn zero_neck_matches_single_level_exactly() {
        let data = small_data();
        let mut fused = model(PoolingMode::Mrfp, 3);
        fused.neck.weight.fill(0.0);
        if let Some(b) = fused.neck.bias.as_mut() {
            b.fill(0.0);
        }
        let mut single = fused.clone();
        single.config.pooling = PoolingMode::Single;
        let scene = &data.test[1];
        let a = fused.embed_boxes(&scene.image, &scene.instances).unwrap();
        let b = single.embed_boxes(&scene.image, &scene.instances).unwrap();
        assert_eq!(a, b);
    }

    fn step(m: &SearchModel, scenes: &[SceneSample], counts: &[usize]) -> (f64, SearchModel, LossReport) {
        let mut m = m.clone();
        let mut g = m.zeros_like();
        let opts = StepOptions {
            id_loss: IdLoss::CrossEntropy,
            id_weight: 1.0,
            class_counts: counts,
        };
        let r = m
            .loss_and_grad(scenes, &opts, &mut ChaCha8Rng::seed_from_u64(9), &mut g)
            .unwrap();
        (r.objective().unwrap(), g, r)
    }

    #[test]
    fn joint_loss_gradient_matches_finite_differences() {
        let data = small_data();
        // Proposal coordinates are constants of the backward pass. Zeroing the
        // RPN regression layer pins them to the anchors, so finite differences
        // of upstream parameters see the same boxes.
        for pooling in [PoolingMode::Mrfp, PoolingMode::Single] {
            joint_gradient_case(&data, pooling);
        }
    }

    fn joint_gradient_case(data: &crate::data::Dataset, pooling: PoolingMode) {
        let mut m = model(pooling, 4);
        m.rpn.reg.weight.fill(0.0);
        if let Some(b) = m.rpn.reg.bias.as_mut() {
            b.fill(0.0);
        }
        let scenes = &data.train[..2];
        let counts = vec![1; 6];
        let (_, g, report) = step(&m, scenes, &counts);
        assert!(report.first_non_finite().is_none());
        assert!(report.composites_consistent(1.0));
        let eps = 1e-6;
        let names = [
            "backbone.s1.weight",
            "backbone.s3.weight",
            "backbone.s5.weight",
            "neck.weight",
            "rpn.conv.weight",
            "rpn.cls.weight",
            "roi_head.fc1.weight",
            "roi_head.reg.weight",
            "embed.bn.gamma",
            "embed.classifier.weight",
        ];
        let grads: Vec<(String, Tensor)> = g.params().into_iter().map(|(n, t)| (n, t.clone())).collect();
        let mut failures = Vec::new();
        for name in names {
            let analytic = &grads
                .iter()
                .find(|(n, _)| n == name)
                .unwrap_or_else(|| panic!("{name}"))
                .1;
            for k in [0, analytic.len() / 2, analytic.len() - 1] {
                let mut plus = m.clone();
                let mut minus = m.clone();
                for (mm, sign) in [(&mut plus, 1.0), (&mut minus, -1.0)] {
                    let mut ps = mm.params_mut();
                    let t = &mut ps.iter_mut().find(|(n, _)| n == name).unwrap().1;
                    t.data_mut()[k] += sign * eps;
                }
                let numeric = (step(&plus, scenes, &counts).0 - step(&minus, scenes, &counts).0) / (2.0 * eps);
                let a = analytic.data()[k];
                if (a - numeric).abs() > 1e-5 * (1.0 + a.abs().max(numeric.abs())) {
                    failures.push(format!("{name}[{k}]: analytic {a} numeric {numeric}"));
                }
            }
        }
        assert!(failures.is_empty(), "{pooling:?}: {failures:#?}");
    }

    #[test]
    fn identification_gradient_reaches_both_levels() {
        let data = small_data();
        let mut m = model(PoolingMode::Mrfp, 5);
        let scene = &data.train[0];
        let (low, high) = m.forward_base(&scene.image).unwrap();
        let lows = split_batch(&low);
        let highs = split_batch(&high);
        let rois: Vec<(usize, BBox)> = scene.instances.iter().map(|b| (0, *b)).collect();
        let (pooled, cache) = m.pool_ident(&lows, &highs, &rois).unwrap();
        let (feat, ic) = m.backbone.forward_ident(&pooled).unwrap();
        let (emb, _, ec) = m.embed.forward(&feat, BnMode::Eval).unwrap();
        let mut g = m.zeros_like();
        let gf = m
            .embed
            .backward(&ec, Some(&Tensor::full(emb.shape(), 1.0)), None, &mut g.embed)
            .unwrap();
        let gp = m.backbone.backward_ident(&ic, &gf, &mut g.backbone).unwrap();
        let mut gl: Vec<Tensor> = lows.iter().map(Tensor::zeros_like).collect();
        let mut gh: Vec<Tensor> = highs.iter().map(Tensor::zeros_like).collect();
        let IdPoolCache::Mrfp(c) = cache else {
            panic!("mrfp expected")
        };
        mrfp_backward(
            &gp,
            &c,
            &ConvNeck(&m.neck),
            &mut g.neck,
            &m.config.mrfp(),
            &mut gl,
            &mut gh,
        )
        .unwrap();
        assert!(gl[0].max_abs() > 0.0);
        assert!(gh[0].max_abs() > 0.0);
        // Spot-check one low and one high entry against finite differences.
        let objective = |lo: &Tensor, hi: &Tensor| m.forward_identification(lo, hi, &scene.instances).unwrap().sum();
        let eps = 1e-6;
        for (is_low, idx) in [(true, argmax(&gl[0])), (false, argmax(&gh[0]))] {
            let (mut lp, mut hp) = (lows[0].clone(), highs[0].clone());
            let (mut lm, mut hm) = (lows[0].clone(), highs[0].clone());
            if is_low {
                lp.data_mut()[idx] += eps;
                lm.data_mut()[idx] -= eps;
            } else {
                hp.data_mut()[idx] += eps;
                hm.data_mut()[idx] -= eps;
            }
            let numeric = (objective(&lp, &hp) - objective(&lm, &hm)) / (2.0 * eps);
            let analytic = if is_low { gl[0].data()[idx] } else { gh[0].data()[idx] };
            assert!(
                (numeric - analytic).abs() < 1e-5 * (1.0 + analytic.abs()),
                "{numeric} vs {analytic}"
            );
        }
        m.zero_grad();
    }

    fn argmax(t: &Tensor) -> usize {
        let mut best = 0;
        for (i, v) in t.data().iter().enumerate() {
            if v.abs() > t.data()[best].abs() {
                best = i;
            }
        }
        best
    }

    #[test]
    fn detector_only_step_has_zero_id_term() {
        let data = small_data();
        let mut m = model(PoolingMode::Mrfp, 6);
        let mut g = m.zeros_like();
        let opts = StepOptions {
            id_loss: IdLoss::CrossEntropy,
            id_weight: 0.0,
            class_counts: &[1; 6],
        };
        let r = m
            .loss_and_grad(&data.train[..2], &opts, &mut ChaCha8Rng::seed_from_u64(1), &mut g)
            .unwrap();
        assert_eq!(r.values()[0], Some(0.0));
        assert_eq!(g.embed.classifier.weight.max_abs(), 0.0);
        assert!(g.roi_head.cls.weight.max_abs() > 0.0);
    }
}
