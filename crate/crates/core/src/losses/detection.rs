//! Detection objectives: RPN objectness and box regression, and the RoI
//! head's person/background classification and box regression.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::classification::cross_entropy_id;

/// Mean of `0.5 x²` for `|x| < 1` and `|x| - 0.5` otherwise, with
/// `x = pred - target`.
pub fn smooth_l1(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "smooth_l1",
            format!("pred {:?} vs target {:?}", pred.shape(), target.shape()),
        ));
    }
    let inv = 1.0 / pred.len() as f64;
    let mut total = 0.0;
    let grad: Vec<f64> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let x = p - t;
            if x.abs() < 1.0 {
                total += 0.5 * x * x;
                x * inv
            } else {
                total += x.abs() - 0.5;
                x.signum() * inv
            }
        })
        .collect();
    Ok((total * inv, Tensor::new(pred.shape(), grad)?))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy of logits against 0/1 targets.
pub fn binary_cross_entropy(logits: &[f64], targets: &[bool]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(Error::shape(
            "binary_cross_entropy",
            format!("{} logits for {} targets", logits.len(), targets.len()),
        ));
    }
    let inv = 1.0 / logits.len() as f64;
    let mut total = 0.0;
    let grad = logits
        .iter()
        .zip(targets)
        .map(|(&z, &t)| {
            // -[t log σ(z) + (1-t) log(1-σ(z))] = softplus(z) - t z
            let y = if t { 1.0 } else { 0.0 };
            total += softplus(z) - y * z;
            (sigmoid(z) - y) * inv
        })
        .collect();
    Ok((total * inv, grad))
}

/// Sampled training targets for one batch, indexing into the flattened
/// prediction tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DetectionTargets {
    /// Sampled anchors and whether each is foreground.
    pub rpn_samples: Vec<(usize, bool)>,
    /// Foreground anchors and their regression targets.
    pub rpn_reg: Vec<(usize, [f64; 4])>,
    /// Foreground flag of every sampled proposal, one per RoI row.
    pub roi_labels: Vec<bool>,
    /// Foreground proposals and their regression targets.
    pub roi_reg: Vec<(usize, [f64; 4])>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionLoss {
    pub cls_rpn: f64,
    pub reg_rpn: f64,
    pub cls: f64,
    pub reg: f64,
    /// Gradients, shaped like the corresponding inputs.
    pub grad_rpn_cls: Tensor,
    pub grad_rpn_reg: Tensor,
    pub grad_roi_cls: Tensor,
    pub grad_roi_reg: Tensor,
}

impl DetectionLoss {
    pub fn total(&self) -> f64 {
        self.cls_rpn + self.reg_rpn + self.cls + self.reg
    }
}

/// Smooth-L1 over the selected rows of an R×4 prediction.
fn selected_smooth_l1(pred: &Tensor, rows: &[(usize, [f64; 4])], op: &'static str) -> Result<(f64, Tensor)> {
    let (r, k) = pred.dims2(op)?;
    if k != 4 {
        return Err(Error::shape(op, format!("regression has {k} columns, expected 4")));
    }
    let mut grad = Tensor::zeros(&[r, 4]);
    if rows.is_empty() {
        return Ok((0.0, grad));
    }
    let mut p = Vec::with_capacity(rows.len() * 4);
    let mut t = Vec::with_capacity(rows.len() * 4);
    for &(i, target) in rows {
        if i >= r {
            return Err(Error::invalid(op, format!("row {i} out of {r}")));
        }
        p.extend_from_slice(pred.row(i));
        t.extend_from_slice(&target);
    }
    let m = rows.len();
    let (loss, g) = smooth_l1(&Tensor::new(&[m, 4], p)?, &Tensor::new(&[m, 4], t)?)?;
    for (row, &(i, _)) in rows.iter().enumerate() {
        for (dst, src) in grad.row_mut(i).iter_mut().zip(g.row(row)) {
            *dst += src;
        }
    }
    Ok((loss, grad))
}

/// The four detection terms. `rpn_cls_logits` holds one objectness logit per
/// anchor (rank 1), `rpn_reg` is anchors×4, `roi_cls_logits` is R×2 with
/// column 1 the person class, and `roi_reg` is R×4.
pub fn detection_loss(
    rpn_cls_logits: &Tensor,
    rpn_reg: &Tensor,
    roi_cls_logits: &Tensor,
    roi_reg: &Tensor,
    targets: &DetectionTargets,
) -> Result<DetectionLoss> {
    if targets.rpn_samples.is_empty() {
        return Err(Error::invalid("detection_loss", "no sampled anchors"));
    }
    let anchors = rpn_cls_logits.len();
    let mut logits = Vec::with_capacity(targets.rpn_samples.len());
    let mut labels = Vec::with_capacity(targets.rpn_samples.len());
    for &(a, fg) in &targets.rpn_samples {
        if a >= anchors {
            return Err(Error::invalid("detection_loss", format!("anchor {a} out of {anchors}")));
        }
        logits.push(rpn_cls_logits.data()[a]);
        labels.push(fg);
    }
    let (cls_rpn, g) = binary_cross_entropy(&logits, &labels)?;
    let mut grad_rpn_cls = Tensor::zeros(rpn_cls_logits.shape());
    for (&(a, _), gv) in targets.rpn_samples.iter().zip(g) {
        grad_rpn_cls.data_mut()[a] += gv;
    }
    let (reg_rpn, grad_rpn_reg) = selected_smooth_l1(rpn_reg, &targets.rpn_reg, "detection_loss.rpn_reg")?;

    let (r, _) = roi_cls_logits.dims2("detection_loss")?;
    if targets.roi_labels.len() != r {
        return Err(Error::shape(
            "detection_loss",
            format!("{} RoI labels for {r} RoIs", targets.roi_labels.len()),
        ));
    }
    let roi_labels: Vec<usize> = targets.roi_labels.iter().map(|&fg| usize::from(fg)).collect();
    let (cls, grad_roi_cls) = cross_entropy_id(roi_cls_logits, &roi_labels)?;
    let (reg, grad_roi_reg) = selected_smooth_l1(roi_reg, &targets.roi_reg, "detection_loss.roi_reg")?;
    Ok(DetectionLoss {
        cls_rpn,
        reg_rpn,
        cls,
        reg,
        grad_rpn_cls,
        grad_rpn_reg,
        grad_roi_cls,
        grad_roi_reg,
    })
}
