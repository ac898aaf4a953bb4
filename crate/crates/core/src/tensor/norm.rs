use super::Tensor;
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Affine parameters and running statistics of a 1-D batch norm over
/// the feature axis of an N×D input.
#[derive(Clone, Debug, PartialEq)]
pub struct BnState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BnState {
    pub fn new(features: usize) -> Self {
        BnState {
            gamma: Tensor::full(&[features], 1.0),
            beta: Tensor::zeros(&[features]),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::full(&[features], 1.0),
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Clone, Debug)]
pub struct BnCache {
    mode: BnMode,
    normalized: Tensor,
    inv_std: Vec<f64>,
}

/// Normalizes an N×D batch. In train mode the batch statistics are used and
/// the running statistics are updated in place.
pub fn batch_norm(input: &Tensor, state: &mut BnState, mode: BnMode) -> Result<(Tensor, BnCache)> {
    let (n, d) = input.dims2("batch_norm")?;
    if d != state.features() {
        return Err(Error::shape(
            "batch_norm",
            format!("{d} features but state holds {}", state.features()),
        ));
    }
    let (mean, var) = match mode {
        BnMode::Train => {
            if n < 2 {
                return Err(Error::invalid("batch_norm", "train mode needs a batch of at least 2"));
            }
            let mut mean = vec![0.0; d];
            for row in input.data().chunks(d) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; d];
            for row in input.data().chunks(d) {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= n as f64);
            let unbias = n as f64 / (n as f64 - 1.0);
            for j in 0..d {
                let rm = &mut state.running_mean.data_mut()[j];
                *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean[j];
                let rv = &mut state.running_var.data_mut()[j];
                *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * var[j] * unbias;
            }
            (mean, var)
        }
        BnMode::Eval => (state.running_mean.data().to_vec(), state.running_var.data().to_vec()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut normalized = vec![0.0; n * d];
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            let xh = (input.data()[i * d + j] - mean[j]) * inv_std[j];
            normalized[i * d + j] = xh;
            out[i * d + j] = xh * state.gamma.data()[j] + state.beta.data()[j];
        }
    }
    Ok((
        Tensor::new(&[n, d], out)?,
        BnCache {
            mode,
            normalized: Tensor::new(&[n, d], normalized)?,
            inv_std,
        },
    ))
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batch_norm_backward(grad_out: &Tensor, cache: &BnCache, gamma: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, d) = cache.normalized.dims2("batch_norm_backward")?;
    if grad_out.shape() != [n, d] {
        return Err(Error::shape(
            "batch_norm_backward",
            format!("grad_out {:?}, expected [{n}, {d}]", grad_out.shape()),
        ));
    }
    let g = grad_out.data();
    let xh = cache.normalized.data();
    let mut sum_g = vec![0.0; d];
    let mut sum_gx = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            sum_g[j] += g[i * d + j];
            sum_gx[j] += g[i * d + j] * xh[i * d + j];
        }
    }
    let mut gi = vec![0.0; n * d];
    match cache.mode {
        BnMode::Train => {
            let nf = n as f64;
            for i in 0..n {
                for j in 0..d {
                    let k = gamma.data()[j] * cache.inv_std[j] / nf;
                    gi[i * d + j] = k * (nf * g[i * d + j] - sum_g[j] - xh[i * d + j] * sum_gx[j]);
                }
            }
        }
        BnMode::Eval => {
            for i in 0..n {
                for j in 0..d {
                    gi[i * d + j] = g[i * d + j] * gamma.data()[j] * cache.inv_std[j];
                }
            }
        }
    }
    Ok((
        Tensor::new(&[n, d], gi)?,
        Tensor::new(&[d], sum_gx)?,
        Tensor::new(&[d], sum_g)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardized_batch_is_fixed_point() {
        // Columns with mean 0 and biased variance 1.
        let x = Tensor::new(&[2, 2], vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let mut st = BnState::new(2);
        let (y, _) = batch_norm(&x, &mut st, BnMode::Train).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn train_mode_output_is_standardized() {
        let x = Tensor::from_fn(&[6, 3], |i| ((i * 7) % 5) as f64 * 1.3 - 2.0 + i as f64 * 0.1);
        let mut st = BnState::new(3);
        let (y, _) = batch_norm(&x, &mut st, BnMode::Train).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = (0..6).map(|i| y.get(&[i, j])).collect();
            let m = col.iter().sum::<f64>() / 6.0;
            let v = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / 6.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn eval_mode_uses_running_stats_exactly() {
        let mut st = BnState::new(2);
        st.running_mean = Tensor::new(&[2], vec![0.5, -1.0]).unwrap();
        st.running_var = Tensor::new(&[2], vec![4.0, 0.25]).unwrap();
        st.gamma = Tensor::new(&[2], vec![2.0, -1.0]).unwrap();
        st.beta = Tensor::new(&[2], vec![0.1, 0.2]).unwrap();
        let x = Tensor::new(&[1, 2], vec![3.0, 2.0]).unwrap();
        let (y, _) = batch_norm(&x, &mut st, BnMode::Eval).unwrap();
        let want0 = (3.0 - 0.5) / (4.0 + BN_EPS).sqrt() * 2.0 + 0.1;
        let want1 = -((2.0 + 1.0) / (0.25 + BN_EPS).sqrt()) + 0.2;
        assert_eq!(y.data(), &[want0, want1]);
    }

    #[test]
    fn train_mode_updates_running_stats_with_momentum() {
        let x = Tensor::new(&[2, 1], vec![1.0, 3.0]).unwrap();
        let mut st = BnState::new(1);
        batch_norm(&x, &mut st, BnMode::Train).unwrap();
        assert!((st.running_mean.data()[0] - 0.2).abs() < 1e-15);
        // unbiased batch variance is 2
        assert!((st.running_var.data()[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn batch_of_one_rejected_in_train_mode() {
        let x = Tensor::zeros(&[1, 4]);
        let mut st = BnState::new(4);
        assert!(batch_norm(&x, &mut st, BnMode::Train).is_err());
        assert!(batch_norm(&x, &mut st, BnMode::Eval).is_ok());
    }
}
