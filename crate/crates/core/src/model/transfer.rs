use super::layers::Module;
use super::reid::ReidModel;
use super::search::SearchModel;
use crate::error::{Error, Result};

/// Names of the tensors that [`transfer_weights`] copies, as
/// `(source, target)` pairs.
pub fn transfer_plan(pretrained: &ReidModel) -> Vec<(String, String)> {
    let mut plan: Vec<(String, String)> = pretrained
        .backbone
        .params()
        .into_iter()
        .map(|(n, _)| (format!("backbone.{n}"), format!("backbone.{n}")))
        .collect();
    for name in ["bn.gamma", "bn.beta"] {
        plan.push((format!("embed.{name}"), format!("embed.{name}")));
    }
    for (n, _) in pretrained.embed.buffers() {
        plan.push((format!("embed.{n}"), format!("embed.{n}")));
    }
    plan
}

/// Initializes the search model's base and identification stages, and its
/// embedding normalization (affine and running statistics), from a
/// pretrained re-id model. The MRFP neck starts from a copy of S3 when the
/// shapes agree. Detector heads, the neck otherwise, and the identity
/// classifier keep their fresh initialization.
pub fn transfer_weights(pretrained: &ReidModel, target: &mut SearchModel) -> Result<()> {
    let src_stages = &pretrained.backbone.stages;
    let dst_stages = &target.backbone.stages;
    if src_stages.len() != dst_stages.len() {
        return Err(Error::Transfer {
            stage: "backbone".into(),
            detail: format!(
                "{} pretrained stages for {} target stages",
                src_stages.len(),
                dst_stages.len()
            ),
        });
    }
    for (i, (s, d)) in src_stages.iter().zip(dst_stages).enumerate() {
        let sp = s.params();
        let dp = d.params();
        let same = sp.len() == dp.len()
            && sp
                .iter()
                .zip(&dp)
                .all(|(a, b)| a.0 == b.0 && a.1.shape() == b.1.shape());
        if !same || s.stride != d.stride || s.padding != d.padding {
            return Err(Error::Transfer {
                stage: format!("s{}", i + 1),
                detail: format!("pretrained {:?} vs target {:?}", s.weight.shape(), d.weight.shape()),
            });
        }
    }
    if pretrained.embed.bn.features() != target.embed.bn.features() {
        return Err(Error::Transfer {
            stage: "embed.bn".into(),
            detail: format!(
                "{} features vs {}",
                pretrained.embed.bn.features(),
                target.embed.bn.features()
            ),
        });
    }

    for (d, s) in target.backbone.stages.iter_mut().zip(src_stages) {
        *d = s.clone();
    }
    target.embed.bn = pretrained.embed.bn.clone();

    let s3 = &pretrained.backbone.stages[2];
    let neck = &mut target.neck;
    let compatible = neck.weight.shape() == s3.weight.shape()
        && neck.stride == s3.stride
        && neck.padding == s3.padding
        && neck.bias.as_ref().map(|b| b.shape()) == s3.bias.as_ref().map(|b| b.shape());
    if compatible {
        *neck = s3.clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BackboneSpec, SearchConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair() -> (ReidModel, SearchModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut reid = ReidModel::new(BackboneSpec::default(), 7, &mut rng).unwrap();
        reid.embed.bn.running_mean = reid.embed.bn.running_mean.map(|_| 0.25);
        let search = SearchModel::new(SearchConfig::default(), 11, &mut rng).unwrap();
        (reid, search)
    }

    #[test]
    fn copies_are_bitwise_and_isolated() {
        let (reid, mut search) = pair();
        let before = reid.clone();
        transfer_weights(&reid, &mut search).unwrap();
        let src: Vec<_> = reid.params().into_iter().chain(reid.buffers()).collect();
        let dst: Vec<_> = search.params().into_iter().chain(search.buffers()).collect();
        for (s, t) in transfer_plan(&reid) {
            let a = src.iter().find(|(n, _)| *n == s).unwrap().1;
            let b = dst.iter().find(|(n, _)| *n == t).unwrap().1;
            assert!(
                a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()),
                "{s}"
            );
        }
        assert_eq!(search.neck, reid.backbone.stages[2]);
        for (_, p) in search.params_mut() {
            p.fill(9.0);
        }
        assert_eq!(reid, before);
    }

    #[test]
    fn classifier_and_heads_untouched() {
        let (reid, mut search) = pair();
        let fresh = search.clone();
        transfer_weights(&reid, &mut search).unwrap();
        assert_eq!(search.embed.classifier, fresh.embed.classifier);
        assert_eq!(search.rpn, fresh.rpn);
        assert_eq!(search.roi_head, fresh.roi_head);
    }

    #[test]
    fn mismatched_stage_is_named() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut spec = BackboneSpec::default();
        spec.channels[3] = 48;
        let reid = ReidModel::new(spec, 5, &mut rng).unwrap();
        let (_, mut search) = pair();
        let err = transfer_weights(&reid, &mut search).unwrap_err().to_string();
        assert!(err.contains("s4"), "{err}");
    }
}
