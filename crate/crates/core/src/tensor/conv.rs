use super::linalg::{gemm, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::{Error, Result};

/// Output extent of a convolution along one axis.
pub fn conv_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    padding: usize,
}

impl Geometry {
    fn new(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Self> {
        let (n, c, h, w) = input.dims4("conv2d")?;
        let (o, ci, kh, kw) = kernel.dims4("conv2d")?;
        if ci != c {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c} channels but kernel expects {ci}"),
            ));
        }
        if kh != kw {
            return Err(Error::shape("conv2d", format!("non-square kernel {kh}x{kw}")));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        let ho = conv_output_size(h, kh, stride, padding)
            .ok_or_else(|| Error::shape("conv2d", format!("kernel {kh} larger than padded height {h}")))?;
        let wo = conv_output_size(w, kw, stride, padding)
            .ok_or_else(|| Error::shape("conv2d", format!("kernel {kw} larger than padded width {w}")))?;
        Ok(Geometry {
            n,
            c,
            h,
            w,
            o,
            k: kh,
            ho,
            wo,
            stride,
            padding,
        })
    }

    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfold one image (C×H×W) into a (C·K·K) × (Ho·Wo) matrix.
    fn im2col(&self, image: &[f64], col: &mut [f64]) {
        let (k, ho, wo) = (self.k, self.ho, self.wo);
        let cols = self.col_cols();
        for ch in 0..self.c {
            let plane = &image[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ch * k + ky) * k + kx;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        let dst_row = &mut dst[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= self.h as isize {
                            dst_row.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            *d = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add a column matrix back onto one image gradient.
    fn col2im(&self, col: &[f64], image: &mut [f64]) {
        let (k, ho, wo) = (self.k, self.ho, self.wo);
        let cols = self.col_cols();
        for ch in 0..self.c {
            let plane = &mut image[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ch * k + ky) * k + kx;
                    let src = &col[row * cols..(row + 1) * cols];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && (ix as usize) < self.w {
                                dst[ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation of an NCHW batch with an OIKK kernel.
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = Geometry::new(input, kernel, stride, padding)?;
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_plane = g.c * g.h * g.w;
    let out_plane = g.o * cols;
    let mut out = vec![0.0; g.n * out_plane];
    let mut col = vec![0.0; rows * cols];
    for b in 0..g.n {
        g.im2col(&input.data()[b * in_plane..(b + 1) * in_plane], &mut col);
        gemm(
            kernel.data(),
            &col,
            &mut out[b * out_plane..(b + 1) * out_plane],
            g.o,
            rows,
            cols,
        );
    }
    Tensor::new(&[g.n, g.o, g.ho, g.wo], out)
}

/// Gradients of `conv2d` with respect to its input and its kernel.
pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor)> {
    let g = Geometry::new(input, kernel, stride, padding)?;
    if grad_out.shape() != [g.n, g.o, g.ho, g.wo] {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "grad_out {:?} does not match forward output {:?}",
                grad_out.shape(),
                [g.n, g.o, g.ho, g.wo]
            ),
        ));
    }
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_plane = g.c * g.h * g.w;
    let out_plane = g.o * cols;
    let mut grad_in = vec![0.0; input.len()];
    let mut grad_k = vec![0.0; kernel.len()];
    let mut col = vec![0.0; rows * cols];
    let mut grad_col = vec![0.0; rows * cols];
    for b in 0..g.n {
        let go = &grad_out.data()[b * out_plane..(b + 1) * out_plane];
        g.im2col(&input.data()[b * in_plane..(b + 1) * in_plane], &mut col);
        gemm_nt(go, &col, &mut grad_k, g.o, cols, rows);
        grad_col.fill(0.0);
        gemm_tn(kernel.data(), go, &mut grad_col, rows, g.o, cols);
        g.col2im(&grad_col, &mut grad_in[b * in_plane..(b + 1) * in_plane]);
    }
    Ok((
        Tensor::new(input.shape(), grad_in)?,
        Tensor::new(kernel.shape(), grad_k)?,
    ))
}
