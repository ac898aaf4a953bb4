//! Softmax classification losses over N×C logits, each returning the batch
//! mean and its gradient with respect to the logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax probabilities and the log-probability of each label.
fn softmax_rows(logits: &Tensor, labels: &[usize]) -> Result<(Tensor, Vec<f64>)> {
    let (n, c) = logits.dims2("softmax")?;
    if labels.len() != n {
        return Err(Error::shape("softmax", format!("{} labels for {n} rows", labels.len())));
    }
    let mut probs = vec![0.0; n * c];
    let mut log_pt = Vec::with_capacity(n);
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::LabelOutOfRange { label: y, classes: c });
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_sum = sum.ln();
        for (p, &z) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
            *p = (z - max).exp() / sum;
        }
        log_pt.push(row[y] - max - log_sum);
    }
    Ok((Tensor::new(&[n, c], probs)?, log_pt))
}

/// Mean of `-log softmax(logits)[label]`.
pub fn cross_entropy_id(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (probs, log_pt) = softmax_rows(logits, labels)?;
    let (n, c) = logits.dims2("cross_entropy_id")?;
    let inv_n = 1.0 / n as f64;
    let loss = log_pt.iter().map(|&l| -l).sum::<f64>() * inv_n;
    let mut grad = probs.into_data();
    for (i, &y) in labels.iter().enumerate() {
        let row = &mut grad[i * c..(i + 1) * c];
        for (j, g) in row.iter_mut().enumerate() {
            let target = if j == y { 1.0 } else { 0.0 };
            *g = (*g - target) * inv_n;
        }
    }
    Ok((loss, Tensor::new(&[n, c], grad)?))
}

/// Mean of `-alpha (1 - p_t)^gamma log p_t`.
pub fn focal_loss(logits: &Tensor, labels: &[usize], gamma: f64, alpha: f64) -> Result<(f64, Tensor)> {
    if gamma < 0.0 {
        return Err(Error::invalid("focal_loss", format!("gamma {gamma} < 0")));
    }
    let (probs, log_pt) = softmax_rows(logits, labels)?;
    let (n, c) = logits.dims2("focal_loss")?;
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = probs.into_data();
    for (i, &y) in labels.iter().enumerate() {
        let lp = log_pt[i];
        let pt = lp.exp();
        let q = 1.0 - pt;
        let modulator = q.powf(gamma);
        total += -alpha * modulator * lp;
        // d/dz_j = alpha * (p_j - [j == y]) * (q^g - g q^(g-1) p_t log p_t)
        let slope = if gamma > 0.0 && q > 0.0 {
            gamma * q.powf(gamma - 1.0) * pt * lp
        } else {
            0.0
        };
        let coeff = alpha * (modulator - slope);
        let row = &mut grad[i * c..(i + 1) * c];
        for (j, g) in row.iter_mut().enumerate() {
            let target = if j == y { 1.0 } else { 0.0 };
            *g = coeff * (*g - target) * inv_n;
        }
    }
    Ok((total * inv_n, Tensor::new(&[n, c], grad)?))
}

/// Per-class weights `(1 - beta) / (1 - beta^n_c)`, rescaled to mean 1.
pub fn class_balanced_weights(class_counts: &[usize], beta: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::invalid(
            "class_balanced_ce",
            format!("beta {beta} outside [0, 1)"),
        ));
    }
    if let Some(k) = class_counts.iter().position(|&n| n == 0) {
        return Err(Error::invalid(
            "class_balanced_ce",
            format!("class {k} has zero samples"),
        ));
    }
    let raw: Vec<f64> = class_counts
        .iter()
        .map(|&n| (1.0 - beta) / (1.0 - beta.powi(n as i32)))
        .collect();
    let total: f64 = raw.iter().sum();
    let c = raw.len() as f64;
    Ok(raw.iter().map(|w| w * c / total).collect())
}

/// Cross-entropy with each sample weighted by its class's effective-number
/// weight.
pub fn class_balanced_ce(
    logits: &Tensor,
    labels: &[usize],
    class_counts: &[usize],
    beta: f64,
) -> Result<(f64, Tensor)> {
    let (n, c) = logits.dims2("class_balanced_ce")?;
    if class_counts.len() != c {
        return Err(Error::shape(
            "class_balanced_ce",
            format!("{} class counts for {c} classes", class_counts.len()),
        ));
    }
    let weights = class_balanced_weights(class_counts, beta)?;
    let (probs, log_pt) = softmax_rows(logits, labels)?;
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = probs.into_data();
    for (i, &y) in labels.iter().enumerate() {
        let w = weights[y];
        total += w * -log_pt[i];
        let row = &mut grad[i * c..(i + 1) * c];
        for (j, g) in row.iter_mut().enumerate() {
            let target = if j == y { 1.0 } else { 0.0 };
            *g = w * (*g - target) * inv_n;
        }
    }
    Ok((total * inv_n, Tensor::new(&[n, c], grad)?))
}

/// Identity-classification objective used during fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum IdLoss {
    #[default]
    CrossEntropy,
    Focal {
        gamma: f64,
        alpha: f64,
    },
    ClassBalanced {
        beta: f64,
    },
}

impl IdLoss {
    /// `class_counts` is only consulted by the class-balanced variant.
    pub fn evaluate(&self, logits: &Tensor, labels: &[usize], class_counts: &[usize]) -> Result<(f64, Tensor)> {
        match *self {
            IdLoss::CrossEntropy => cross_entropy_id(logits, labels),
            IdLoss::Focal { gamma, alpha } => focal_loss(logits, labels, gamma, alpha),
            IdLoss::ClassBalanced { beta } => class_balanced_ce(logits, labels, class_counts, beta),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits() -> Tensor {
        Tensor::new(&[2, 3], vec![0.2, -1.3, 0.7, 1.5, 0.1, -0.4]).unwrap()
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let (l, _) = cross_entropy_id(&Tensor::zeros(&[4, 5]), &[0, 1, 2, 4]).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn large_margin_drives_loss_to_zero() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 50.0] {
            let z = Tensor::new(&[1, 3], vec![margin, 0.0, 0.0]).unwrap();
            let (l, _) = cross_entropy_id(&z, &[0]).unwrap();
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn direct_formula_small_instance() {
        let z = logits();
        let labels = [2, 0];
        let direct = |row: &[f64], y: usize| {
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            -(row[y].exp() / s).ln()
        };
        let want = (direct(&z.data()[..3], 2) + direct(&z.data()[3..], 0)) / 2.0;
        let (l, _) = cross_entropy_id(&z, &labels).unwrap();
        assert!((l - want).abs() < 1e-14);
    }

    #[test]
    fn out_of_range_label() {
        assert!(matches!(
            cross_entropy_id(&logits(), &[0, 3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
        assert!(focal_loss(&logits(), &[5, 0], 2.0, 0.25).is_err());
    }

    #[test]
    fn focal_with_gamma_zero_is_cross_entropy_bitwise() {
        let z = logits();
        let (a, ga) = cross_entropy_id(&z, &[1, 2]).unwrap();
        let (b, gb) = focal_loss(&z, &[1, 2], 0.0, 1.0).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        for (x, y) in ga.data().iter().zip(gb.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn focal_direct_formula_gamma_two() {
        let z = logits();
        let (l, _) = focal_loss(&z, &[0, 1], 2.0, 0.25).unwrap();
        let term = |row: &[f64], y: usize| {
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            let p = row[y].exp() / s;
            -0.25 * (1.0 - p).powi(2) * p.ln()
        };
        let want = (term(&z.data()[..3], 0) + term(&z.data()[3..], 1)) / 2.0;
        assert!((l - want).abs() < 1e-14);
    }

    #[test]
    fn focal_vanishes_when_confident() {
        let z = Tensor::new(&[1, 2], vec![40.0, 0.0]).unwrap();
        let (l, g) = focal_loss(&z, &[0], 2.0, 0.25).unwrap();
        assert!(l < 1e-30);
        assert!(g.is_finite());
    }

    #[test]
    fn class_balanced_degenerate_cases_match_ce() {
        let z = logits();
        let (ce, _) = cross_entropy_id(&z, &[1, 0]).unwrap();
        let (b0, _) = class_balanced_ce(&z, &[1, 0], &[3, 50, 7], 0.0).unwrap();
        assert_eq!(ce.to_bits(), b0.to_bits());
        let (eq, _) = class_balanced_ce(&z, &[1, 0], &[9, 9, 9], 0.999).unwrap();
        assert!((ce - eq).abs() < 1e-14);
    }

    #[test]
    fn rare_class_gets_larger_weight() {
        let w = class_balanced_weights(&[10, 1000], 0.999).unwrap();
        assert!(w[0] > w[1]);
        assert!(((w[0] + w[1]) / 2.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_count_rejected() {
        assert!(class_balanced_ce(&logits(), &[0, 1], &[1, 0, 2], 0.9).is_err());
    }
}
