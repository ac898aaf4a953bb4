//! Dense row-major `f64` arrays and the fixed set of differentiable
//! primitives the detector and re-identification networks are built from.
//!
//! Image-like tensors use NCHW layout. Every primitive comes as a forward
//! function plus an explicit backward function; there is no tape.

mod conv;
mod gradcheck;
pub mod io;
mod linalg;
mod linear;
mod norm;
mod pool;

pub use conv::{conv2d, conv2d_backward, conv_output_size};
pub use gradcheck::{finite_diff_check, CheckReport, GradCheck};
pub use linalg::{gemm, gemm_nt, gemm_tn};
pub use linear::{fully_connected, fully_connected_backward};
pub use norm::{batch_norm, batch_norm_backward, BnCache, BnMode, BnState, BN_EPS, BN_MOMENTUM};
pub use pool::{global_avg_pool, global_avg_pool_backward};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape(
                "Tensor::new",
                format!("zero-sized dimension in {shape:?}"),
            ));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(&other.shape)
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Dimensions of a rank-4 tensor as `(n, c, h, w)`.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(op, format!("expected NCHW, got {:?}", self.shape))),
        }
    }

    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(op, format!("expected CHW, got {:?}", self.shape))),
        }
    }

    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(op, format!("expected a matrix, got {:?}", self.shape))),
        }
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| {
            debug_assert!(i < d);
            acc * d + i
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same(other, "add")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same(other, "sub")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += k * other`.
    pub fn axpy(&mut self, k: f64, other: &Tensor) -> Result<()> {
        self.check_same(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    fn check_same(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    /// Row `i` of the leading axis as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        let stride = self.data.len() / self.shape[0];
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let stride = self.data.len() / self.shape[0];
        &mut self.data[i * stride..(i + 1) * stride]
    }

    /// Stack equally-shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("stack", "no tensors to stack"))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            first.check_same(t, "stack")?;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape, data })
    }

    /// Select rows of the leading axis, in order, duplicates allowed.
    pub fn gather_rows(&self, rows: &[usize]) -> Result<Tensor> {
        if rows.is_empty() {
            return Err(Error::invalid("gather_rows", "empty row selection"));
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        let mut data = Vec::with_capacity(rows.len() * self.len() / self.shape[0]);
        for &r in rows {
            if r >= self.shape[0] {
                return Err(Error::shape("gather_rows", format!("row {r} of {}", self.shape[0])));
            }
            data.extend_from_slice(self.row(r));
        }
        Ok(Tensor { shape, data })
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Backward of ReLU given its *output*.
pub fn relu_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
        .collect();
    Tensor {
        shape: output.shape.clone(),
        data,
    }
}
