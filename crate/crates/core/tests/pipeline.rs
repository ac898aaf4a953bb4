#![allow(clippy::field_reassign_with_default)]

use proptest::prelude::*;

use pslab::experiment::{ExperimentConfig, InitMode};
use pslab::model::{transfer_weights, BackboneSpec, PoolingMode, ReidModel, SearchConfig, SearchModel};
use pslab::rng::{rng_for, stream};
use pslab::roi::BBox;
use pslab::tensor::BnMode;
use pslab::Tensor;

fn noise(shape: &[usize], seed: u64) -> Tensor {
    use rand::Rng;
    let mut rng = rng_for(seed, stream::GENERIC, 0);
    Tensor::from_fn(shape, |_| rng.gen_range(0.0..1.0))
}

#[test]
fn transferred_model_reproduces_pretrained_embeddings_on_full_crop_rois() {
    let mut rng = rng_for(3, stream::INIT, 0);
    let mut reid = ReidModel::new(BackboneSpec::default(), 12, &mut rng).unwrap();
    // Move the running statistics away from their initial values.
    reid.forward(&noise(&[6, 3, 32, 16], 1), BnMode::Train).unwrap();

    let cfg = SearchConfig {
        pooling: PoolingMode::Single,
        id_pooled: (4, 2),
        sampling: 1,
        ..SearchConfig::default()
    };
    let mut search = SearchModel::new(cfg, 12, &mut rng).unwrap();
    transfer_weights(&reid, &mut search).unwrap();

    let crops = noise(&[3, 3, 32, 16], 2);
    let expected = reid.embed(&crops).unwrap();
    let whole = BBox::new(0.0, 0.0, 16.0, 32.0);
    for i in 0..3 {
        let image = Tensor::new(&[3, 32, 16], crops.data()[i * 1536..(i + 1) * 1536].to_vec()).unwrap();
        let got = search.embed_boxes(&image, &[whole]).unwrap();
        for (a, b) in got.row(0).iter().zip(expected.row(i)) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }
}

#[test]
fn full_scale_config_validates_and_round_trips() {
    let cfg = ExperimentConfig::full_scale();
    cfg.validate().unwrap();
    assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips_through_toml(
        seed in any::<u64>(),
        init in 0usize..3,
        mrfp in any::<bool>(),
        epochs in 1usize..50,
        lr in 1e-5f64..1.0,
        zipf in 0.1f64..3.0,
    ) {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = seed;
        cfg.init = InitMode::ALL[init];
        cfg.model.pooling = if mrfp { PoolingMode::Mrfp } else { PoolingMode::Single };
        cfg.finetune.schedule.epochs = epochs;
        cfg.finetune.schedule.decay_epoch = epochs - 1;
        cfg.finetune.schedule.lr = lr;
        cfg.dataset.zipf_exponent = zipf;
        prop_assert!(cfg.validate().is_ok());
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn embeddings_have_fixed_width_for_any_image_and_boxes(
        hs in 4usize..10,
        ws in 4usize..12,
        mrfp in any::<bool>(),
        boxes in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.05f64..1.0, 0.05f64..1.0), 1..5),
        seed in 0u64..1000,
    ) {
        let (h, w) = (hs * 8, ws * 8);
        let cfg = SearchConfig {
            pooling: if mrfp { PoolingMode::Mrfp } else { PoolingMode::Single },
            ..SearchConfig::default()
        };
        let mut rng = rng_for(seed, stream::INIT, 0);
        let model = SearchModel::new(cfg, 5, &mut rng).unwrap();
        let image = noise(&[3, h, w], seed);
        let (wf, hf) = (w as f64, h as f64);
        let rois: Vec<BBox> = boxes
            .iter()
            .map(|&(x, y, bw, bh)| {
                let x1 = x * wf * 0.9;
                let y1 = y * hf * 0.9;
                BBox::new(x1, y1, (x1 + bw * wf).min(wf), (y1 + bh * hf).min(hf))
            })
            .collect();
        let emb = model.embed_boxes(&image, &rois).unwrap();
        prop_assert_eq!(emb.shape(), &[rois.len(), model.config.backbone.embedding_dim()][..]);
        prop_assert!(emb.is_finite());

        let dets = model.forward_detector(&model.forward_base(&image).unwrap().1, wf, hf).unwrap();
        for d in dets {
            prop_assert!(d.x1 >= 0.0 && d.y1 >= 0.0 && d.x2 <= wf && d.y2 <= hf);
            prop_assert!(d.score.is_some());
        }
    }
}
