//! Procedural scenes: textured backgrounds with clutter and blocky persons
//! whose colours and stripes are fixed per identity.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::DatasetConfig;
use crate::error::Result;
use crate::rng::{rng_for, stream};
use crate::roi::{iou, BBox};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityAppearance {
    pub identity_id: usize,
    pub head: [f64; 3],
    pub shirt: [f64; 3],
    pub pants: [f64; 3],
    /// Stripe colour and stripe count across the shirt.
    pub stripes: Option<([f64; 3], usize)>,
    /// Width-to-height ratio of the body.
    pub aspect: f64,
    /// Shirt length as a fraction of body height.
    pub torso: f64,
}

fn rgb<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> [f64; 3] {
    [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
}

impl IdentityAppearance {
    /// Appearance drawn from `(seed, key)`; identities use their id as key.
    fn draw(seed: u64, stream_id: u64, key: u64, identity_id: usize) -> Self {
        let mut rng = rng_for(seed, stream_id, key);
        let tone = rng.gen_range(0.45..0.9);
        let head = [tone, tone * rng.gen_range(0.7..0.85), tone * rng.gen_range(0.5..0.7)];
        let shirt = rgb(&mut rng, 0.05, 0.95);
        let pants = rgb(&mut rng, 0.05, 0.8);
        let stripes = if rng.gen_bool(0.5) {
            Some((rgb(&mut rng, 0.05, 0.95), rng.gen_range(2..=4)))
        } else {
            None
        };
        let (lo, hi) = DatasetConfig::PERSON_ASPECT;
        IdentityAppearance {
            identity_id,
            head,
            shirt,
            pants,
            stripes,
            aspect: rng.gen_range(lo..hi),
            torso: rng.gen_range(0.3..0.42),
        }
    }

    pub fn for_identity(seed: u64, identity_id: usize) -> Self {
        Self::draw(seed, stream::APPEARANCE, identity_id as u64, identity_id)
    }

    /// Colour of the body at relative position `(u, v)` in the box, or `None`
    /// where the background shows through.
    fn colour_at(&self, u: f64, v: f64) -> Option<[f64; 3]> {
        const HEAD: f64 = 0.18;
        if v < HEAD {
            let du = (u - 0.5) / 0.22;
            let dv = (v - HEAD * 0.5) / (HEAD * 0.5);
            return (du * du + dv * dv <= 1.0).then_some(self.head);
        }
        let waist = HEAD + self.torso;
        if v < waist {
            if let Some((colour, n)) = self.stripes {
                let band = ((v - HEAD) / self.torso * (2 * n) as f64) as usize;
                if band % 2 == 1 {
                    return Some(colour);
                }
            }
            return Some(self.shirt);
        }
        ((u - 0.3).abs() < 0.17 || (u - 0.7).abs() < 0.17).then_some(self.pants)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    /// 3×H×W, values in [0, 1].
    pub image: Tensor,
    /// Person boxes; `identity` is `None` for unlabeled persons.
    pub instances: Vec<BBox>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub identity: usize,
    pub bbox: BBox,
    /// Index into the test scenes.
    pub scene: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub train: Vec<SceneSample>,
    pub test: Vec<SceneSample>,
    pub queries: Vec<Query>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1 << 40,
        }
    }
}

/// Probability of each rank under a Zipf law with exponent `s`.
pub fn zipf_pmf(n: usize, s: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=n).map(|k| (k as f64).powf(-s)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}

/// Boxes of every scene in a split, before rendering. Labeled persons carry
/// their identity; unlabeled ones carry `None`.
pub fn layout(config: &DatasetConfig, split: Split) -> Result<Vec<Vec<BBox>>> {
    config.validate()?;
    let (pool, offset, scenes) = match split {
        Split::Train => (config.num_identities, 0, config.scenes),
        Split::Test => (config.test_identities, config.num_identities, config.test_scenes),
    };
    let picker = WeightedIndex::new(zipf_pmf(pool, config.zipf_exponent)).expect("positive weights");
    let (h_img, w_img) = (config.image_h as f64, config.image_w as f64);
    let mut out = Vec::with_capacity(scenes);
    for s in 0..scenes {
        let mut rng = rng_for(config.seed, stream::LAYOUT, split.tag() | s as u64);
        let count = rng.gen_range(2..=config.max_per_scene);
        let mut boxes: Vec<BBox> = Vec::with_capacity(count);
        for slot in 0..count {
            let identity = if rng.gen_bool(config.unlabeled_fraction) {
                None
            } else {
                Some(offset + picker.sample(&mut rng))
            };
            let base_aspect = match identity {
                Some(id) => IdentityAppearance::for_identity(config.seed, id).aspect,
                None => distractor(config.seed, split, s, slot).aspect,
            };
            let (hlo, hhi) = DatasetConfig::PERSON_HEIGHT;
            let h = (rng.gen_range(hlo..hhi) * h_img).round();
            let aspect = base_aspect * rng.gen_range(0.95..1.05);
            let w = (h * aspect).round().max(2.0);
            let mut placed = BBox::new(0.0, 0.0, w, h);
            for _ in 0..20 {
                let x1 = rng.gen_range(0.0..=(w_img - w)).floor();
                let y1 = rng.gen_range(0.0..=(h_img - h)).floor();
                placed = BBox::new(x1, y1, x1 + w, y1 + h);
                if boxes.iter().all(|b| iou(b, &placed) <= 0.3) {
                    break;
                }
            }
            boxes.push(placed.with_identity(identity));
        }
        out.push(boxes);
    }
    Ok(out)
}

fn distractor(seed: u64, split: Split, scene: usize, slot: usize) -> IdentityAppearance {
    let key = split.tag() | ((scene as u64) << 8) | slot as u64;
    IdentityAppearance::draw(seed, stream::DISTRACTOR, key, usize::MAX)
}

fn render(config: &DatasetConfig, split: Split, scene: usize, boxes: &[BBox]) -> SceneSample {
    let (h, w) = (config.image_h, config.image_w);
    let mut rng = rng_for(config.seed, stream::RENDER, split.tag() | scene as u64);
    let grey = rng.gen_range(0.3..0.7);
    let base: Vec<f64> = (0..3).map(|_| grey + rng.gen_range(-0.1..0.1)).collect();
    let (fx, fy, phase) = (
        rng.gen_range(0.02..0.15),
        rng.gen_range(0.02..0.15),
        rng.gen_range(0.0..6.3),
    );
    let mut img = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let wave = 0.08 * (fx * x as f64 + fy * y as f64 + phase).sin();
            for c in 0..3 {
                img[(c * h + y) * w + x] = base[c] + wave;
            }
        }
    }
    // Clutter: wide, short blocks that are not person-shaped.
    for _ in 0..rng.gen_range(2..=4) {
        let bh = rng.gen_range(3..=10).min(h);
        let bw = rng.gen_range(8..=28).min(w);
        let y0 = rng.gen_range(0..=h - bh);
        let x0 = rng.gen_range(0..=w - bw);
        let colour = rgb(&mut rng, 0.0, 1.0);
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                for c in 0..3 {
                    img[(c * h + y) * w + x] = colour[c];
                }
            }
        }
    }
    for (slot, b) in boxes.iter().enumerate() {
        let look = match b.identity {
            Some(id) => IdentityAppearance::for_identity(config.seed, id),
            None => distractor(config.seed, split, scene, slot),
        };
        let brightness = rng.gen_range(0.85..1.15);
        for y in b.y1 as usize..b.y2 as usize {
            let v = (y as f64 + 0.5 - b.y1) / b.height();
            for x in b.x1 as usize..b.x2 as usize {
                let u = (x as f64 + 0.5 - b.x1) / b.width();
                if let Some(colour) = look.colour_at(u, v) {
                    for c in 0..3 {
                        img[(c * h + y) * w + x] = colour[c] * brightness;
                    }
                }
            }
        }
    }
    for v in img.iter_mut() {
        let noise: f64 = rng.gen_range(-0.05..0.05);
        *v = (*v + noise).clamp(0.0, 1.0);
    }
    SceneSample {
        image: Tensor::new(&[3, h, w], img).expect("shape matches"),
        instances: boxes.to_vec(),
    }
}

/// Queries: the first instance of every test identity that appears in at
/// least two test scenes.
fn select_queries(test: &[Vec<BBox>]) -> Vec<Query> {
    use std::collections::BTreeMap;
    let mut scenes_of: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (s, boxes) in test.iter().enumerate() {
        for b in boxes {
            if let Some(id) = b.identity {
                let list = scenes_of.entry(id).or_default();
                if list.last() != Some(&s) {
                    list.push(s);
                }
            }
        }
    }
    scenes_of
        .into_iter()
        .filter(|(_, s)| s.len() >= 2)
        .map(|(id, s)| {
            let scene = s[0];
            let bbox = *test[scene].iter().find(|b| b.identity == Some(id)).expect("present");
            Query {
                identity: id,
                bbox,
                scene,
            }
        })
        .collect()
}

pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset> {
    let train_layout = layout(config, Split::Train)?;
    let test_layout = layout(config, Split::Test)?;
    let queries = select_queries(&test_layout);
    let draw = |split, boxes: &[Vec<BBox>]| {
        boxes
            .iter()
            .enumerate()
            .map(|(s, b)| render(config, split, s, b))
            .collect::<Vec<_>>()
    };
    Ok(Dataset {
        config: config.clone(),
        train: draw(Split::Train, &train_layout),
        test: draw(Split::Test, &test_layout),
        queries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            num_identities: 8,
            test_identities: 4,
            scenes: 10,
            test_scenes: 8,
            ..Default::default()
        }
    }

    #[test]
    fn appearance_is_deterministic_per_identity() {
        assert_eq!(
            IdentityAppearance::for_identity(3, 5),
            IdentityAppearance::for_identity(3, 5)
        );
        assert_ne!(
            IdentityAppearance::for_identity(3, 5),
            IdentityAppearance::for_identity(3, 6)
        );
    }

    #[test]
    fn scenes_respect_bounds_and_counts() {
        let cfg = small();
        let ds = generate_dataset(&cfg).unwrap();
        for s in ds.train.iter().chain(&ds.test) {
            assert_eq!(s.image.shape(), &[3, cfg.image_h, cfg.image_w]);
            assert!((2..=cfg.max_per_scene).contains(&s.instances.len()));
            for b in &s.instances {
                assert!(b.is_within(cfg.image_w as f64, cfg.image_h as f64));
            }
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn splits_use_disjoint_identities() {
        let cfg = small();
        let ds = generate_dataset(&cfg).unwrap();
        for b in ds.train.iter().flat_map(|s| &s.instances) {
            assert!(b.identity.is_none_or(|id| id < cfg.num_identities));
        }
        for b in ds.test.iter().flat_map(|s| &s.instances) {
            assert!(b.identity.is_none_or(|id| id >= cfg.num_identities));
        }
    }

    #[test]
    fn queries_have_gallery_matches() {
        let ds = generate_dataset(&small()).unwrap();
        assert!(!ds.queries.is_empty());
        for q in &ds.queries {
            let elsewhere = ds
                .test
                .iter()
                .enumerate()
                .any(|(s, sc)| s != q.scene && sc.instances.iter().any(|b| b.identity == Some(q.identity)));
            assert!(elsewhere);
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = generate_dataset(&small()).unwrap();
        let b = generate_dataset(&small()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zipf_pmf_sums_to_one() {
        let p = zipf_pmf(50, 1.2);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[0] / p[1] - 2f64.powf(1.2)).abs() < 1e-12);
    }
}
