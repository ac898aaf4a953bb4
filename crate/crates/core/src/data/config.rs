use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of a synthetic person-search dataset.
///
/// Train and test scenes draw their persons from disjoint identity pools,
/// each with Zipf-distributed frequencies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Identities of the training split.
    pub num_identities: usize,
    /// Identities of the test split, disjoint from the training ones.
    pub test_identities: usize,
    pub zipf_exponent: f64,
    /// Training scenes.
    pub scenes: usize,
    pub test_scenes: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub max_per_scene: usize,
    pub crop_h: usize,
    pub crop_w: usize,
    pub unlabeled_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            num_identities: 60,
            test_identities: 30,
            zipf_exponent: 1.2,
            scenes: 240,
            test_scenes: 80,
            image_h: 64,
            image_w: 96,
            max_per_scene: 5,
            crop_h: 32,
            crop_w: 16,
            unlabeled_fraction: 0.2,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    /// Person heights are drawn from this fraction range of the image height.
    pub const PERSON_HEIGHT: (f64, f64) = (0.45, 0.78);
    /// Width-to-height ratio range of a person box.
    pub const PERSON_ASPECT: (f64, f64) = (0.4, 0.55);

    pub fn validate(&self) -> Result<()> {
        if self.num_identities < 2 {
            return Err(Error::config("num_identities", "need at least 2"));
        }
        if self.test_identities < 1 {
            return Err(Error::config("test_identities", "need at least 1"));
        }
        if !(self.zipf_exponent > 0.0) || !self.zipf_exponent.is_finite() {
            return Err(Error::config("zipf_exponent", "must be positive"));
        }
        if self.scenes == 0 || self.test_scenes == 0 {
            return Err(Error::config("scenes", "both splits need scenes"));
        }
        if self.max_per_scene < 2 {
            return Err(Error::config("max_per_scene", "scenes hold at least 2 persons"));
        }
        if self.crop_h < 8 || self.crop_w < 8 {
            return Err(Error::config("crop_h", "crop sides must be at least 8"));
        }
        if self.crop_h > self.image_h || self.crop_w > self.image_w {
            return Err(Error::config(
                "crop_h",
                format!(
                    "crop {}x{} larger than scene {}x{}",
                    self.crop_h, self.crop_w, self.image_h, self.image_w
                ),
            ));
        }
        if self.image_h < 16 {
            return Err(Error::config("image_h", "scenes must be at least 16 pixels tall"));
        }
        let widest = self.image_h as f64 * Self::PERSON_HEIGHT.1 * Self::PERSON_ASPECT.1;
        if widest * 2.0 > self.image_w as f64 {
            return Err(Error::config("image_w", "too narrow to hold two persons"));
        }
        if !(0.0..1.0).contains(&self.unlabeled_fraction) {
            return Err(Error::config("unlabeled_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        DatasetConfig::default().validate().unwrap();
    }

    #[test]
    fn crop_larger_than_scene_rejected() {
        let cfg = DatasetConfig {
            crop_h: 128,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn degenerate_fields_rejected() {
        for cfg in [
            DatasetConfig {
                num_identities: 1,
                ..Default::default()
            },
            DatasetConfig {
                zipf_exponent: 0.0,
                ..Default::default()
            },
            DatasetConfig {
                crop_w: 4,
                ..Default::default()
            },
            DatasetConfig {
                max_per_scene: 1,
                ..Default::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
