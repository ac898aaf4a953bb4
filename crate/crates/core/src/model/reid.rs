use rand::Rng;

use super::backbone::{Backbone, BackboneSpec, BaseCache, EmbedCache, EmbedHead, IdentCache};
use super::layers::{prefixed, prefixed_mut, Module};
use crate::error::Result;
use crate::tensor::{BnMode, Tensor};

/// Full backbone over whole crops, followed by the embedding head.
#[derive(Clone, Debug, PartialEq)]
pub struct ReidModel {
    pub backbone: Backbone,
    pub embed: EmbedHead,
}

pub struct ReidCache {
    base: BaseCache,
    ident: IdentCache,
    embed: EmbedCache,
}

pub struct ReidOutput {
    pub embeddings: Tensor,
    pub logits: Tensor,
    pub cache: ReidCache,
}

impl ReidModel {
    pub fn new<R: Rng>(spec: BackboneSpec, classes: usize, rng: &mut R) -> Result<Self> {
        let backbone = Backbone::new(spec, rng)?;
        let embed = EmbedHead::new(spec.embedding_dim(), classes, rng);
        Ok(ReidModel { backbone, embed })
    }

    /// N×3×h×w crops to embeddings and identity logits. Train mode uses
    /// batch statistics and updates the running ones.
    pub fn forward(&mut self, crops: &Tensor, mode: BnMode) -> Result<ReidOutput> {
        let (_, high, base) = self.backbone.forward_base(crops)?;
        let (pooled, ident) = self.backbone.forward_ident(&high)?;
        let (embeddings, logits, embed) = self.embed.forward(&pooled, mode)?;
        Ok(ReidOutput {
            embeddings,
            logits,
            cache: ReidCache { base, ident, embed },
        })
    }

    /// Embeddings with running statistics; leaves the model untouched.
    pub fn embed(&self, crops: &Tensor) -> Result<Tensor> {
        let (_, high, _) = self.backbone.forward_base(crops)?;
        let (pooled, _) = self.backbone.forward_ident(&high)?;
        self.embed.embed(&pooled)
    }

    pub fn backward(
        &self,
        cache: &ReidCache,
        grad_emb: Option<&Tensor>,
        grad_logits: Option<&Tensor>,
        grad: &mut ReidModel,
    ) -> Result<()> {
        let gp = self
            .embed
            .backward(&cache.embed, grad_emb, grad_logits, &mut grad.embed)?;
        let gh = self.backbone.backward_ident(&cache.ident, &gp, &mut grad.backbone)?;
        self.backbone
            .backward_base(&cache.base, None, Some(&gh), &mut grad.backbone)
    }

    /// A zero-valued model with the same layout, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.zero_grad();
        g
    }
}

impl Module for ReidModel {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("backbone", self.backbone.params());
        v.extend(prefixed("embed", self.embed.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = prefixed_mut("backbone", self.backbone.params_mut());
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
