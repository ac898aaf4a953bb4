use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainLossConfig {
    /// Weight of the center term.
    pub lambda_center: f64,
    pub triplet_margin: f64,
    /// Step size of the center update rule.
    pub center_lr: f64,
    /// Batch-hard triplet term on; off gives a softmax-only objective.
    #[serde(default = "enabled")]
    pub triplet: bool,
    #[serde(default = "enabled")]
    pub center: bool,
}

fn enabled() -> bool {
    true
}

impl Default for PretrainLossConfig {
    fn default() -> Self {
        PretrainLossConfig {
            lambda_center: 5e-4,
            triplet_margin: 0.3,
            center_lr: 0.5,
            triplet: true,
            center: true,
        }
    }
}

impl PretrainLossConfig {
    /// Identity classification alone.
    pub fn softmax_only() -> Self {
        PretrainLossConfig {
            triplet: false,
            center: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_center >= 0.0) {
            return Err(Error::config("lambda_center", "must be non-negative"));
        }
        if !(self.triplet_margin >= 0.0) {
            return Err(Error::config("triplet_margin", "must be non-negative"));
        }
        if !(self.center_lr >= 0.0) {
            return Err(Error::config("center_lr", "must be non-negative"));
        }
        Ok(())
    }
}

pub fn pretrain_loss(l_id: f64, l_tri: f64, l_center: f64, lambda: f64) -> f64 {
    l_id + l_tri + lambda * l_center
}

pub fn search_loss(l_id: f64, l_det: f64) -> f64 {
    l_id + l_det
}

/// Loss terms of one optimization step; terms not computed by the current
/// objective are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct LossReport {
    pub L_id: Option<f64>,
    pub L_tri: Option<f64>,
    pub L_center: Option<f64>,
    pub L_pre: Option<f64>,
    pub L_cls_rpn: Option<f64>,
    pub L_reg_rpn: Option<f64>,
    pub L_cls: Option<f64>,
    pub L_reg: Option<f64>,
    pub L_det: Option<f64>,
    pub L: Option<f64>,
}

impl LossReport {
    /// Column names, in log order.
    pub const COLUMNS: [&'static str; 10] = [
        "L_id",
        "L_tri",
        "L_center",
        "L_pre",
        "L_cls_rpn",
        "L_reg_rpn",
        "L_cls",
        "L_reg",
        "L_det",
        "L",
    ];

    /// Re-ID pretraining step. Missing metric terms count as zero in `L_pre`.
    pub fn pretrain(l_id: f64, l_tri: Option<f64>, l_center: Option<f64>, lambda: f64) -> Self {
        let pre = pretrain_loss(l_id, l_tri.unwrap_or(0.0), l_center.unwrap_or(0.0), lambda);
        LossReport {
            L_id: Some(l_id),
            L_tri: l_tri,
            L_center: l_center,
            L_pre: Some(pre),
            ..Default::default()
        }
    }

    /// Person-search step.
    pub fn search(l_id: f64, cls_rpn: f64, reg_rpn: f64, cls: f64, reg: f64) -> Self {
        let det = cls_rpn + reg_rpn + cls + reg;
        LossReport {
            L_id: Some(l_id),
            L_cls_rpn: Some(cls_rpn),
            L_reg_rpn: Some(reg_rpn),
            L_cls: Some(cls),
            L_reg: Some(reg),
            L_det: Some(det),
            L: Some(search_loss(l_id, det)),
            ..Default::default()
        }
    }

    pub fn values(&self) -> [Option<f64>; 10] {
        [
            self.L_id,
            self.L_tri,
            self.L_center,
            self.L_pre,
            self.L_cls_rpn,
            self.L_reg_rpn,
            self.L_cls,
            self.L_reg,
            self.L_det,
            self.L,
        ]
    }

    /// Inverse of [`LossReport::values`].
    pub fn from_values(v: [Option<f64>; 10]) -> Self {
        LossReport {
            L_id: v[0],
            L_tri: v[1],
            L_center: v[2],
            L_pre: v[3],
            L_cls_rpn: v[4],
            L_reg_rpn: v[5],
            L_cls: v[6],
            L_reg: v[7],
            L_det: v[8],
            L: v[9],
        }
    }

    /// The term that the optimizer minimizes.
    pub fn objective(&self) -> Option<f64> {
        self.L.or(self.L_pre)
    }

    /// First term (by column order) that is present but not finite.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        Self::COLUMNS
            .iter()
            .zip(self.values())
            .find(|(_, v)| v.is_some_and(|x| !x.is_finite()))
            .map(|(name, _)| *name)
    }

    /// Whether every present composite equals the sum of its parts to 1e-9.
    pub fn composites_consistent(&self, lambda: f64) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
        let z = |v: Option<f64>| v.unwrap_or(0.0);
        let mut ok = true;
        if let (Some(pre), Some(id)) = (self.L_pre, self.L_id) {
            ok &= close(pre, pretrain_loss(id, z(self.L_tri), z(self.L_center), lambda));
        }
        if let Some(det) = self.L_det {
            ok &= close(
                det,
                z(self.L_cls_rpn) + z(self.L_reg_rpn) + z(self.L_cls) + z(self.L_reg),
            );
            if let Some(l) = self.L {
                ok &= close(l, search_loss(z(self.L_id), det));
            }
        }
        ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pretrain_arithmetic() {
        assert!((pretrain_loss(1.0, 0.5, 100.0, 5e-4) - 1.55).abs() < 1e-12);
        assert_eq!(pretrain_loss(1.0, 0.5, 100.0, 0.0), 1.5);
        assert_eq!(pretrain_loss(0.0, 0.0, 0.0, 5e-4), 0.0);
    }

    #[test]
    fn search_arithmetic() {
        assert_eq!(search_loss(0.7, 1.3), 2.0);
        assert_eq!(search_loss(0.7, 0.0), 0.7);
        assert_eq!(search_loss(0.0, 0.0), 0.0);
    }

    #[test]
    fn reports_are_consistent() {
        let p = LossReport::pretrain(2.0, Some(0.3), Some(40.0), 5e-4);
        assert!(p.composites_consistent(5e-4));
        let s = LossReport::search(0.4, 0.1, 0.2, 0.3, 0.05);
        assert!(s.composites_consistent(5e-4));
        assert_eq!(s.objective(), s.L);
        let softmax_only = LossReport::pretrain(1.2, None, None, 5e-4);
        assert_eq!(softmax_only.L_pre, Some(1.2));
        assert!(softmax_only.L_tri.is_none());
    }

    #[test]
    fn non_finite_is_named() {
        let s = LossReport::search(0.4, f64::NAN, 0.2, 0.3, 0.05);
        assert_eq!(s.first_non_finite(), Some("L_cls_rpn"));
    }

    #[test]
    fn negative_lambda_rejected() {
        let cfg = PretrainLossConfig {
            lambda_center: -1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
