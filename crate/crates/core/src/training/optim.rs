use crate::error::{Error, Result};
use crate::model::{check_layout, Module};
use crate::tensor::Tensor;

fn check_pairs(op: &'static str, params: &[&mut Tensor], grads: &[&Tensor], state: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::shape(
            op,
            format!(
                "{} params, {} grads, {} state tensors",
                params.len(),
                grads.len(),
                state.len()
            ),
        ));
    }
    for (i, ((p, g), s)) in params.iter().zip(grads).zip(state).enumerate() {
        if p.shape() != g.shape() || p.shape() != s.shape() {
            return Err(Error::shape(
                op,
                format!(
                    "tensor {i}: param {:?}, grad {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    s.shape()
                ),
            ));
        }
    }
    Ok(())
}

/// Adam moments and step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shapes: &[&[usize]]) -> Self {
        AdamState {
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_module<M: Module>(module: &M) -> Self {
        let params = module.params();
        let shapes: Vec<&[usize]> = params.iter().map(|(_, t)| t.shape()).collect();
        Self::new(&shapes)
    }
}

/// One Adam step with bias correction. Weight decay is added to the
/// gradient before the moment updates.
pub fn adaptive_moment_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    check_pairs("adaptive_moment_step", params, grads, &state.m)?;
    check_pairs("adaptive_moment_step", params, grads, &state.v)?;
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, x) in p.data_mut().iter_mut().enumerate() {
            let gk = g[k] + weight_decay * *x;
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            *x -= lr * mh / (vh.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Velocity buffers of momentum SGD.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<Tensor>,
}

impl SgdState {
    pub fn new(shapes: &[&[usize]]) -> Self {
        SgdState {
            velocity: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn for_module<M: Module>(module: &M) -> Self {
        let params = module.params();
        let shapes: Vec<&[usize]> = params.iter().map(|(_, t)| t.shape()).collect();
        Self::new(&shapes)
    }
}

/// `v ← m·v + (g + wd·p)`, then `p ← p − lr·v`.
pub fn momentum_sgd_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut SgdState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    check_pairs("momentum_sgd_step", params, grads, &state.velocity)?;
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let v = state.velocity[i].data_mut();
        for (k, x) in p.data_mut().iter_mut().enumerate() {
            v[k] = momentum * v[k] + g[k] + weight_decay * *x;
            *x -= lr * v[k];
        }
    }
    Ok(())
}

/// Parameters of `module` and the matching gradients of `grad`, in order.
pub fn module_pairs<'a, M: Module>(
    module: &'a mut M,
    grad: &'a M,
    op: &'static str,
) -> Result<(Vec<&'a mut Tensor>, Vec<&'a Tensor>)> {
    check_layout(module, grad, op)?;
    let params = module.params_mut().into_iter().map(|(_, t)| t).collect();
    let grads = grad.params().into_iter().map(|(_, t)| t).collect();
    Ok((params, grads))
}

/// Rescales all gradients so that their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<M: Module>(grad: &mut M, max_norm: f64) -> f64 {
    let norm = grad.grad_norm();
    if norm > max_norm {
        let k = max_norm / norm;
        for (_, t) in grad.params_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::new(&[1], vec![v]).unwrap()
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        for g in [1e-3, 0.5, 40.0] {
            let mut p = scalar(2.0);
            let mut st = AdamState::new(&[&[1]]);
            adaptive_moment_step(&mut [&mut p], &[&scalar(g)], &mut st, 0.01, 0.0).unwrap();
            assert!((2.0 - p.data()[0] - 0.01).abs() < 1e-6, "{g}");
        }
    }

    #[test]
    fn adam_zero_grad_only_decays() {
        let mut p = scalar(1.0);
        let mut st = AdamState::new(&[&[1]]);
        adaptive_moment_step(&mut [&mut p], &[&scalar(0.0)], &mut st, 0.01, 0.0).unwrap();
        assert_eq!(p.data()[0], 1.0);
        adaptive_moment_step(&mut [&mut p], &[&scalar(0.0)], &mut st, 0.01, 0.1).unwrap();
        assert!(p.data()[0] < 1.0 && p.data()[0] > 0.98);
    }

    #[test]
    fn adam_minimizes_square() {
        let mut p = scalar(1.0);
        let mut st = AdamState::new(&[&[1]]);
        for _ in 0..500 {
            let g = scalar(2.0 * p.data()[0]);
            adaptive_moment_step(&mut [&mut p], &[&g], &mut st, 0.1, 0.0).unwrap();
        }
        assert!(p.data()[0].abs() < 1e-2, "{}", p.data()[0]);
    }

    #[test]
    fn sgd_momentum_recurrence() {
        let (lr, m, g) = (0.1, 0.9, 2.0);
        let mut p = scalar(0.0);
        let mut st = SgdState::new(&[&[1]]);
        momentum_sgd_step(&mut [&mut p], &[&scalar(g)], &mut st, lr, m, 0.0).unwrap();
        let first = -p.data()[0];
        assert!((first - lr * g).abs() < 1e-15);
        momentum_sgd_step(&mut [&mut p], &[&scalar(g)], &mut st, lr, m, 0.0).unwrap();
        let second = -p.data()[0] - first;
        assert!((second - lr * g * (1.0 + m)).abs() < 1e-15);
    }

    #[test]
    fn sgd_weight_decay_shrinks_geometrically() {
        let mut p = scalar(1.0);
        let mut st = SgdState::new(&[&[1]]);
        for step in 1..=5 {
            momentum_sgd_step(&mut [&mut p], &[&scalar(0.0)], &mut st, 0.1, 0.0, 0.5).unwrap();
            assert!((p.data()[0] - 0.95f64.powi(step)).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::zeros(&[2]);
        let mut st = SgdState::new(&[&[2]]);
        assert!(momentum_sgd_step(&mut [&mut p], &[&scalar(1.0)], &mut st, 0.1, 0.0, 0.0).is_err());
        let mut st = AdamState::new(&[&[3]]);
        assert!(adaptive_moment_step(&mut [&mut p], &[&Tensor::zeros(&[2])], &mut st, 0.1, 0.0).is_err());
    }
}
