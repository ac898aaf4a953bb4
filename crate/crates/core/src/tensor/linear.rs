use super::linalg::{gemm, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::{Error, Result};

/// Affine map `input[N×D] · weight[D×M] + bias[M]`.
pub fn fully_connected(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (n, d) = input.dims2("fully_connected")?;
    let (wd, m) = weight.dims2("fully_connected")?;
    if wd != d {
        return Err(Error::shape(
            "fully_connected",
            format!("input width {d} does not match weight rows {wd}"),
        ));
    }
    let mut out = vec![0.0; n * m];
    if let Some(b) = bias {
        if b.shape() != [m] {
            return Err(Error::shape(
                "fully_connected",
                format!("bias {:?} for width {m}", b.shape()),
            ));
        }
        for row in out.chunks_mut(m) {
            row.copy_from_slice(b.data());
        }
    }
    gemm(input.data(), weight.data(), &mut out, n, d, m);
    Tensor::new(&[n, m], out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn fully_connected_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weight: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, d) = input.dims2("fully_connected_backward")?;
    let (_, m) = weight.dims2("fully_connected_backward")?;
    if grad_out.shape() != [n, m] {
        return Err(Error::shape(
            "fully_connected_backward",
            format!("grad_out {:?}, expected [{n}, {m}]", grad_out.shape()),
        ));
    }
    let mut gi = vec![0.0; n * d];
    gemm_nt(grad_out.data(), weight.data(), &mut gi, n, m, d);
    let mut gw = vec![0.0; d * m];
    gemm_tn(input.data(), grad_out.data(), &mut gw, d, n, m);
    let mut gb = vec![0.0; m];
    for row in grad_out.data().chunks(m) {
        for (b, g) in gb.iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok((
        Tensor::new(&[n, d], gi)?,
        Tensor::new(&[d, m], gw)?,
        Tensor::new(&[m], gb)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_zero_bias() {
        let x = Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 4.0]).unwrap();
        let w = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let b = Tensor::zeros(&[3]);
        assert_eq!(fully_connected(&x, &w, Some(&b)).unwrap(), x);
    }

    #[test]
    fn small_affine_example() {
        let x = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::new(&[2], vec![1.0, 1.0]).unwrap();
        assert_eq!(fully_connected(&x, &w, Some(&b)).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let x = Tensor::zeros(&[1, 3]);
        let w = Tensor::zeros(&[2, 2]);
        assert!(fully_connected(&x, &w, None).is_err());
    }
}
