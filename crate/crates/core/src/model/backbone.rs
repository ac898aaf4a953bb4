use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{prefixed, prefixed_mut, Conv, Init, Linear, Module};
use crate::error::{Error, Result};
use crate::tensor::{
    batch_norm, batch_norm_backward, global_avg_pool, global_avg_pool_backward, relu, relu_backward, BnCache, BnMode,
    BnState, Tensor,
};

/// Five 3×3 conv stages. S1–S3 form the base network (S2 gives the
/// low-level map, S3 the high-level one); S4–S5 form the identification
/// network, with S5 at stride 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub channels: [usize; 5],
    pub strides: [usize; 5],
    pub bias: bool,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec {
            channels: [8, 16, 32, 64, 64],
            strides: [2, 2, 2, 2, 1],
            bias: true,
        }
    }
}

impl BackboneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.strides[4] != 1 {
            return Err(Error::config("backbone.strides", "the last stage must have stride 1"));
        }
        if self.channels.contains(&0) || self.strides.contains(&0) {
            return Err(Error::config("backbone", "channels and strides must be positive"));
        }
        Ok(())
    }

    /// Cumulative stride of the low-level (S2) map.
    pub fn low_stride(&self) -> usize {
        self.strides[0] * self.strides[1]
    }

    /// Cumulative stride of the high-level (S3) map.
    pub fn high_stride(&self) -> usize {
        self.low_stride() * self.strides[2]
    }

    pub fn low_channels(&self) -> usize {
        self.channels[1]
    }

    pub fn high_channels(&self) -> usize {
        self.channels[2]
    }

    pub fn embedding_dim(&self) -> usize {
        self.channels[4]
    }

    /// Spatial size after a stride-`s`, pad-1, 3×3 conv.
    pub fn stage_size(size: usize, stride: usize) -> usize {
        (size + 2 - 3) / stride + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub spec: BackboneSpec,
    pub stages: Vec<Conv>,
}

pub struct BaseCache {
    input: Tensor,
    acts: [Tensor; 3],
}

pub struct IdentCache {
    input: Tensor,
    acts: [Tensor; 2],
}

impl Backbone {
    pub fn new<R: Rng>(spec: BackboneSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut cin = 3;
        let mut stages = Vec::with_capacity(5);
        for (&c, &s) in spec.channels.iter().zip(&spec.strides) {
            stages.push(Conv::new(cin, c, 3, s, 1, spec.bias, Init::He, rng));
            cin = c;
        }
        Ok(Backbone { spec, stages })
    }

    /// Returns the S2 (low) and S3 (high) activations of an N×3×H×W batch.
    pub fn forward_base(&self, images: &Tensor) -> Result<(Tensor, Tensor, BaseCache)> {
        let a1 = relu(&self.stages[0].forward(images)?);
        let a2 = relu(&self.stages[1].forward(&a1)?);
        let a3 = relu(&self.stages[2].forward(&a2)?);
        Ok((
            a2.clone(),
            a3.clone(),
            BaseCache {
                input: images.clone(),
                acts: [a1, a2, a3],
            },
        ))
    }

    /// Either gradient may be `None` when that level received none.
    pub fn backward_base(
        &self,
        cache: &BaseCache,
        grad_low: Option<&Tensor>,
        grad_high: Option<&Tensor>,
        grad: &mut Backbone,
    ) -> Result<()> {
        let [a1, a2, a3] = &cache.acts;
        let mut g2 = match grad_high {
            Some(gh) => {
                let gz3 = relu_backward(a3, gh);
                self.stages[2].backward(a2, &gz3, &mut grad.stages[2])?
            }
            None => Tensor::zeros(a2.shape()),
        };
        if let Some(gl) = grad_low {
            g2.add_assign(gl)?;
        }
        let gz2 = relu_backward(a2, &g2);
        let g1 = self.stages[1].backward(a1, &gz2, &mut grad.stages[1])?;
        let gz1 = relu_backward(a1, &g1);
        self.stages[0].backward(&cache.input, &gz1, &mut grad.stages[0])?;
        Ok(())
    }

    /// S4 → S5 → global average pool over N×C×h×w RoI features.
    pub fn forward_ident(&self, x: &Tensor) -> Result<(Tensor, IdentCache)> {
        let a4 = relu(&self.stages[3].forward(x)?);
        let a5 = relu(&self.stages[4].forward(&a4)?);
        let pooled = global_avg_pool(&a5)?;
        Ok((
            pooled,
            IdentCache {
                input: x.clone(),
                acts: [a4, a5],
            },
        ))
    }

    pub fn backward_ident(&self, cache: &IdentCache, grad_pooled: &Tensor, grad: &mut Backbone) -> Result<Tensor> {
        let [a4, a5] = &cache.acts;
        let g5 = global_avg_pool_backward(grad_pooled, a5.shape())?;
        let gz5 = relu_backward(a5, &g5);
        let g4 = self.stages[4].backward(a4, &gz5, &mut grad.stages[4])?;
        let gz4 = relu_backward(a4, &g4);
        self.stages[3].backward(&cache.input, &gz4, &mut grad.stages[3])
    }
}

impl Module for Backbone {
    fn params(&self) -> Vec<(String, &Tensor)> {
        self.stages
            .iter()
            .enumerate()
            .flat_map(|(i, s)| prefixed(&format!("s{}", i + 1), s.params()))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.stages
            .iter_mut()
            .enumerate()
            .flat_map(|(i, s)| prefixed_mut(&format!("s{}", i + 1), s.params_mut()))
            .collect()
    }
}

/// Batch-normalized embedding plus a bias-free identity classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedHead {
    pub bn: BnState,
    pub classifier: Linear,
}

pub struct EmbedCache {
    bn: BnCache,
    emb: Tensor,
}

impl EmbedHead {
    pub fn new<R: Rng>(dim: usize, classes: usize, rng: &mut R) -> Self {
        EmbedHead {
            bn: BnState::new(dim),
            classifier: Linear::new(dim, classes, false, Init::FanIn, rng),
        }
    }

    pub fn classes(&self) -> usize {
        self.classifier.weight.shape()[1]
    }

    /// Returns `(embeddings, logits)`.
    pub fn forward(&mut self, pooled: &Tensor, mode: BnMode) -> Result<(Tensor, Tensor, EmbedCache)> {
        let (emb, bn) = batch_norm(pooled, &mut self.bn, mode)?;
        let logits = self.classifier.forward(&emb)?;
        Ok((emb.clone(), logits, EmbedCache { bn, emb }))
    }

    /// Embeddings only, with running statistics.
    pub fn embed(&self, pooled: &Tensor) -> Result<Tensor> {
        let mut bn = self.bn.clone();
        Ok(batch_norm(pooled, &mut bn, BnMode::Eval)?.0)
    }

    pub fn backward(
        &self,
        cache: &EmbedCache,
        grad_emb: Option<&Tensor>,
        grad_logits: Option<&Tensor>,
        grad: &mut EmbedHead,
    ) -> Result<Tensor> {
        let mut g = match grad_emb {
            Some(g) => g.clone(),
            None => Tensor::zeros(cache.emb.shape()),
        };
        if let Some(gl) = grad_logits {
            g.add_assign(&self.classifier.backward(&cache.emb, gl, &mut grad.classifier)?)?;
        }
        let (gi, dgamma, dbeta) = batch_norm_backward(&g, &cache.bn, &self.bn.gamma)?;
        grad.bn.gamma.add_assign(&dgamma)?;
        grad.bn.beta.add_assign(&dbeta)?;
        Ok(gi)
    }
}

impl Module for EmbedHead {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("bn", self.bn.params());
        v.extend(prefixed("classifier", self.classifier.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = prefixed_mut("bn", self.bn.params_mut());
        v.extend(prefixed_mut("classifier", self.classifier.params_mut()));
        v
    }

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        prefixed("bn", self.bn.buffers())
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        prefixed_mut("bn", self.bn.buffers_mut())
    }
}
