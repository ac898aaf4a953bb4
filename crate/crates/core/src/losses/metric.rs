//! Embedding-space losses: batch-hard triplet and center loss.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Hardest positive and hardest negative of each anchor. Ties resolve to the
/// lowest index.
pub fn hardest_pairs(embeddings: &Tensor, labels: &[usize]) -> Result<Vec<(usize, usize)>> {
    let (n, _) = embeddings.dims2("batch_hard_triplet")?;
    if labels.len() != n {
        return Err(Error::shape(
            "batch_hard_triplet",
            format!("{} labels for {n} rows", labels.len()),
        ));
    }
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let fi = embeddings.row(i);
        let mut pos: Option<(usize, f64)> = None;
        let mut neg: Option<(usize, f64)> = None;
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = distance(fi, embeddings.row(j));
            if labels[j] == labels[i] {
                if pos.is_none_or(|(_, best)| d > best) {
                    pos = Some((j, d));
                }
            } else if neg.is_none_or(|(_, best)| d < best) {
                neg = Some((j, d));
            }
        }
        match (pos, neg) {
            (Some((p, _)), Some((q, _))) => pairs.push((p, q)),
            (None, _) => {
                return Err(Error::invalid(
                    "batch_hard_triplet",
                    format!("identity {} has a single sample in the batch", labels[i]),
                ))
            }
            (_, None) => return Err(Error::invalid("batch_hard_triplet", "batch holds a single identity")),
        }
    }
    Ok(pairs)
}

/// Mean over anchors of `max(0, margin + d(a, p) - d(a, n))` with Euclidean
/// distances and the batch-hard positive and negative of each anchor.
pub fn batch_hard_triplet(embeddings: &Tensor, labels: &[usize], margin: f64) -> Result<(f64, Tensor)> {
    let pairs = hardest_pairs(embeddings, labels)?;
    let (n, d) = embeddings.dims2("batch_hard_triplet")?;
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = Tensor::zeros(&[n, d]);
    for (i, &(p, q)) in pairs.iter().enumerate() {
        let fi = embeddings.row(i);
        let fp = embeddings.row(p);
        let fq = embeddings.row(q);
        let dp = distance(fi, fp);
        let dn = distance(fi, fq);
        let hinge = margin + dp - dn;
        if hinge <= 0.0 {
            continue;
        }
        total += hinge;
        let g = grad.data_mut();
        // The distance is not differentiable at zero; use the zero subgradient.
        if dp > 0.0 {
            for k in 0..d {
                let u = (fi[k] - fp[k]) / dp * inv_n;
                g[i * d + k] += u;
                g[p * d + k] -= u;
            }
        }
        if dn > 0.0 {
            for k in 0..d {
                let u = (fi[k] - fq[k]) / dn * inv_n;
                g[i * d + k] -= u;
                g[q * d + k] += u;
            }
        }
    }
    Ok((total * inv_n, grad))
}

/// Learnable per-identity centres.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterState {
    /// classes × D
    pub centers: Tensor,
}

impl CenterState {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        CenterState {
            centers: Tensor::zeros(&[classes, dim]),
        }
    }

    fn check(&self, embeddings: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
        let (n, d) = embeddings.dims2("center_loss")?;
        let (c, cd) = self.centers.dims2("center_loss")?;
        if cd != d {
            return Err(Error::shape(
                "center_loss",
                format!("centres are {cd}-d, embeddings {d}-d"),
            ));
        }
        if labels.len() != n {
            return Err(Error::shape(
                "center_loss",
                format!("{} labels for {n} rows", labels.len()),
            ));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::LabelOutOfRange { label: y, classes: c });
        }
        Ok((n, d))
    }

    /// `1/(2N) Σ ||f_i - c_{y_i}||²` and its gradient with respect to the
    /// embeddings.
    pub fn loss(&self, embeddings: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
        let (n, d) = self.check(embeddings, labels)?;
        let inv_n = 1.0 / n as f64;
        let mut total = 0.0;
        let mut grad = Tensor::zeros(&[n, d]);
        for (i, &y) in labels.iter().enumerate() {
            let f = embeddings.row(i);
            let c = self.centers.row(y);
            let g = grad.row_mut(i);
            for k in 0..d {
                let diff = f[k] - c[k];
                total += diff * diff;
                g[k] = diff * inv_n;
            }
        }
        Ok((0.5 * total * inv_n, grad))
    }

    /// Gradient of [`CenterState::loss`] with respect to the centres.
    pub fn center_grad(&self, embeddings: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let (n, d) = self.check(embeddings, labels)?;
        let inv_n = 1.0 / n as f64;
        let mut grad = Tensor::zeros(self.centers.shape());
        for (i, &y) in labels.iter().enumerate() {
            let f = embeddings.row(i);
            let c = self.centers.row(y).to_vec();
            for (k, g) in grad.row_mut(y).iter_mut().enumerate().take(d) {
                *g -= (f[k] - c[k]) * inv_n;
            }
        }
        Ok(grad)
    }

    /// Moves each centre present in the batch towards its samples:
    /// `c_j -= rate * Σ_{y_i = j} (c_j - f_i) / (1 + n_j)`.
    pub fn update(&mut self, embeddings: &Tensor, labels: &[usize], rate: f64) -> Result<()> {
        let (_, d) = self.check(embeddings, labels)?;
        let classes = self.centers.shape()[0];
        let mut delta = vec![0.0; classes * d];
        let mut counts = vec![0usize; classes];
        for (i, &y) in labels.iter().enumerate() {
            counts[y] += 1;
            let f = embeddings.row(i);
            let c = self.centers.row(y);
            for k in 0..d {
                delta[y * d + k] += c[k] - f[k];
            }
        }
        for (j, &cnt) in counts.iter().enumerate() {
            if cnt == 0 {
                continue;
            }
            let scale = rate / (1.0 + cnt as f64);
            for (c, dl) in self.centers.row_mut(j).iter_mut().zip(&delta[j * d..(j + 1) * d]) {
                *c -= scale * dl;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_embeddings_give_margin() {
        let e = Tensor::full(&[4, 3], 0.7);
        let (l, g) = batch_hard_triplet(&e, &[0, 0, 1, 1], 0.3).unwrap();
        assert!((l - 0.3).abs() < 1e-15);
        assert!(g.is_finite());
    }

    #[test]
    fn separated_clusters_give_zero() {
        let e = Tensor::new(&[4, 2], vec![0.0, 0.0, 0.1, 0.0, 10.0, 0.0, 10.1, 0.0]).unwrap();
        let (l, g) = batch_hard_triplet(&e, &[0, 0, 1, 1], 0.3).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn hardest_choice_and_ties() {
        // Anchor 0 has positives at distance 1 (idx 1) and 3 (idx 2), and two
        // negatives tied at distance 2 (idx 3 and 4).
        let e = Tensor::new(&[5, 1], vec![0.0, 1.0, 3.0, 2.0, -2.0]).unwrap();
        let pairs = hardest_pairs(&e, &[0, 0, 0, 1, 1]).unwrap();
        assert_eq!(pairs[0], (2, 3));
    }

    #[test]
    fn singleton_identity_rejected() {
        let e = Tensor::zeros(&[3, 2]);
        assert!(batch_hard_triplet(&e, &[0, 0, 1], 0.3).is_err());
        assert!(batch_hard_triplet(&e, &[0, 0, 0], 0.3).is_err());
    }

    #[test]
    fn center_loss_zero_at_centres() {
        let mut st = CenterState::zeros(2, 2);
        st.centers = Tensor::new(&[2, 2], vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let e = Tensor::new(&[2, 2], vec![-1.0, 0.5, 1.0, 2.0]).unwrap();
        let (l, g) = st.loss(&e, &[1, 0]).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn single_sample_half_squared_norm() {
        let st = CenterState::zeros(1, 2);
        let e = Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap();
        let (l, g) = st.loss(&e, &[0]).unwrap();
        assert_eq!(l, 0.5);
        assert_eq!(g.data(), &[1.0, 0.0]);
        assert_eq!(st.center_grad(&e, &[0]).unwrap().data(), &[-1.0, 0.0]);
    }

    #[test]
    fn center_update_moves_towards_samples() {
        let mut st = CenterState::zeros(3, 1);
        let e = Tensor::new(&[3, 1], vec![2.0, 4.0, 9.0]).unwrap();
        st.update(&e, &[0, 0, 1], 0.5).unwrap();
        // class 0: delta = (0-2)+(0-4) = -6, scale 0.5/3 -> +1
        assert!((st.centers.get(&[0, 0]) - 1.0).abs() < 1e-15);
        // class 1: delta = -9, scale 0.5/2 -> +2.25
        assert!((st.centers.get(&[1, 0]) - 2.25).abs() < 1e-15);
        assert_eq!(st.centers.get(&[2, 0]), 0.0);
        let (before, _) = CenterState::zeros(3, 1).loss(&e, &[0, 0, 1]).unwrap();
        let (after, _) = st.loss(&e, &[0, 0, 1]).unwrap();
        assert!(after < before);
    }

    #[test]
    fn center_label_out_of_range() {
        let st = CenterState::zeros(2, 2);
        assert!(st.loss(&Tensor::zeros(&[1, 2]), &[2]).is_err());
    }
}
