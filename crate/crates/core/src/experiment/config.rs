use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DatasetConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::losses::PretrainLossConfig;
use crate::model::{PoolingMode, SearchConfig};
use crate::training::{FinetuneConfig, PretrainConfig, PretrainSchedule};

pub const SCHEMA_VERSION: u32 = 1;

/// How the search model's backbone is initialized before fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Fresh weights.
    Random,
    /// Pretrained on the generic shape-classification set.
    Generic,
    /// Pretrained as a re-id model on identity crops of the training split.
    Stl,
}

impl InitMode {
    pub const ALL: [InitMode; 3] = [InitMode::Random, InitMode::Generic, InitMode::Stl];

    pub fn name(self) -> &'static str {
        match self {
            InitMode::Random => "random",
            InitMode::Generic => "generic",
            InitMode::Stl => "stl",
        }
    }
}

pub fn pooling_name(p: PoolingMode) -> &'static str {
    match p {
        PoolingMode::Single => "single",
        PoolingMode::Mrfp => "mrfp",
    }
}

/// Pretraining on the generic classification set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericConfig {
    /// Images per class; there are 16 classes.
    pub per_class: usize,
    pub pretrain: PretrainConfig,
}

impl Default for GenericConfig {
    fn default() -> Self {
        GenericConfig {
            per_class: 48,
            pretrain: PretrainConfig {
                loss: PretrainLossConfig::softmax_only(),
                schedule: PretrainSchedule::desk(),
                ..PretrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Run directory name under the output root.
    pub name: String,
    pub seed: u64,
    pub init: InitMode,
    /// Save a fine-tuning checkpoint every this many epochs; 0 keeps only
    /// the final one.
    #[serde(default)]
    pub checkpoint_every: usize,
    pub dataset: DatasetConfig,
    pub model: SearchConfig,
    pub pretrain: PretrainConfig,
    pub generic: GenericConfig,
    pub finetune: FinetuneConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            name: "stl-mrfp".into(),
            seed: 0,
            init: InitMode::Stl,
            checkpoint_every: 0,
            dataset: DatasetConfig::default(),
            model: SearchConfig::default(),
            pretrain: PretrainConfig::default(),
            generic: GenericConfig::default(),
            finetune: FinetuneConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn section(name: &'static str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::Config { field, reason } => {
            let last = name.rsplit('.').next().unwrap_or(name);
            let field = field.strip_prefix(&format!("{last}.")).unwrap_or(&field).to_string();
            Error::config(format!("{name}.{field}"), reason)
        }
        other => Error::config(name, other.to_string()),
    })
}

impl ExperimentConfig {
    /// Every full-scale schedule value and anchor size in place of the desk ones.
    pub fn full_scale() -> Self {
        let mut c = Self::default();
        c.pretrain.schedule = PretrainSchedule::full_scale();
        c.generic.pretrain.schedule = PretrainSchedule::full_scale();
        c.finetune.schedule = crate::training::FinetuneSchedule::full_scale();
        c.model.rpn = crate::model::RpnConfig::full_scale();
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("is {}, this build reads {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(Error::config("name", "must be a plain directory name"));
        }
        section("dataset", self.dataset.validate())?;
        section("model", self.model.validate())?;
        section("pretrain", self.pretrain.validate())?;
        section("generic.pretrain", self.generic.pretrain.validate())?;
        if self.generic.per_class < 2 {
            return Err(Error::config("generic.per_class", "need at least 2 images per class"));
        }
        section("finetune", self.finetune.validate())?;
        section("eval", self.eval.validate())?;
        let s3 = self.model.backbone.high_stride();
        if !self.dataset.crop_h.is_multiple_of(s3) || !self.dataset.crop_w.is_multiple_of(s3) {
            return Err(Error::config(
                "dataset.crop_h",
                format!("crop sides must be multiples of the stride {s3}"),
            ));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config("<toml>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Canonical name of an arm: `<init>-<pooling>-s<seed>`.
    pub fn arm_name(&self) -> String {
        format!(
            "{}-{}-s{}",
            self.init.name(),
            pooling_name(self.model.pooling),
            self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        for c in [ExperimentConfig::default(), ExperimentConfig::full_scale()] {
            let text = c.to_toml();
            let back = ExperimentConfig::from_toml(&text).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_toml(), text);
        }
    }

    #[test]
    fn field_level_diagnostics() {
        let mut c = ExperimentConfig::default();
        c.finetune.schedule.batch_size = 0;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("`finetune.batch_size`"), "{err}");
        let c = ExperimentConfig {
            schema_version: 7,
            ..ExperimentConfig::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("schema_version"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = ExperimentConfig::default().to_toml() + "\nbogus = 1\n";
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }
}
