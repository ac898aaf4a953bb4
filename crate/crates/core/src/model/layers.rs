use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{conv2d, conv2d_backward, fully_connected, fully_connected_backward, BnState, Tensor};

/// Named access to learnable parameters and non-learnable buffers. Names are
/// dotted paths (`base.s1.weight`); the order is fixed per type so that a
/// model and its gradient (a value of the same type) line up.
pub trait Module {
    fn params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        Vec::new()
    }

    fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.fill(0.0);
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    fn grad_norm(&self) -> f64 {
        self.params().iter().map(|(_, t)| t.sq_norm()).sum::<f64>().sqrt()
    }
}

pub(crate) fn prefixed<'a>(prefix: &str, items: Vec<(String, &'a Tensor)>) -> Vec<(String, &'a Tensor)> {
    items.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
}

pub(crate) fn prefixed_mut<'a>(prefix: &str, items: Vec<(String, &'a mut Tensor)>) -> Vec<(String, &'a mut Tensor)> {
    items.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
}

/// Weight initialization: `U(-b, b)` with `b = gain / sqrt(fan_in)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `gain = 1`; used for fresh heads.
    FanIn,
    /// `gain = sqrt(6)`, He-uniform for ReLU stacks.
    He,
}

impl Init {
    fn bound(self, fan_in: usize) -> f64 {
        let gain = match self {
            Init::FanIn => 1.0,
            Init::He => 6f64.sqrt(),
        };
        gain / (fan_in as f64).sqrt()
    }
}

fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// Square-kernel convolution with optional per-channel bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    /// out × in × k × k
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let bound = init.bound(cin * k * k);
        let weight = uniform(&[cout, cin, k, k], bound, rng);
        let bias = bias.then(|| {
            let b = Init::FanIn.bound(cin * k * k);
            uniform(&[cout], b, rng)
        });
        Conv {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = conv2d(x, &self.weight, self.stride, self.padding)?;
        if let Some(b) = &self.bias {
            let (n, c, h, w) = y.dims4("conv")?;
            let plane = h * w;
            let data = y.data_mut();
            for i in 0..n {
                for (ch, &bv) in b.data().iter().enumerate().take(c) {
                    for v in &mut data[(i * c + ch) * plane..(i * c + ch + 1) * plane] {
                        *v += bv;
                    }
                }
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor, grad: &mut Conv) -> Result<Tensor> {
        let (gi, gk) = conv2d_backward(grad_out, x, &self.weight, self.stride, self.padding)?;
        grad.weight.add_assign(&gk)?;
        if let Some(gb) = &mut grad.bias {
            let (n, c, h, w) = grad_out.dims4("conv_backward")?;
            let plane = h * w;
            let g = grad_out.data();
            let gbd = gb.data_mut();
            for i in 0..n {
                for (ch, acc) in gbd.iter_mut().enumerate().take(c) {
                    *acc += g[(i * c + ch) * plane..(i * c + ch + 1) * plane].iter().sum::<f64>();
                }
            }
        }
        Ok(gi)
    }
}

impl Module for Conv {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut v = vec![("weight".to_string(), &self.weight)];
        if let Some(b) = &self.bias {
            v.push(("bias".to_string(), b));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = vec![("weight".to_string(), &mut self.weight)];
        if let Some(b) = &mut self.bias {
            v.push(("bias".to_string(), b));
        }
        v
    }
}

/// `x · W + b` over N×D inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// in × out
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new<R: Rng>(din: usize, dout: usize, bias: bool, init: Init, rng: &mut R) -> Self {
        let bound = init.bound(din);
        Linear {
            weight: uniform(&[din, dout], bound, rng),
            bias: bias.then(|| uniform(&[dout], Init::FanIn.bound(din), rng)),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        fully_connected(x, &self.weight, self.bias.as_ref())
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor, grad: &mut Linear) -> Result<Tensor> {
        let (gi, gw, gb) = fully_connected_backward(grad_out, x, &self.weight)?;
        grad.weight.add_assign(&gw)?;
        if let Some(b) = &mut grad.bias {
            b.add_assign(&gb)?;
        }
        Ok(gi)
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut v = vec![("weight".to_string(), &self.weight)];
        if let Some(b) = &self.bias {
            v.push(("bias".to_string(), b));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = vec![("weight".to_string(), &mut self.weight)];
        if let Some(b) = &mut self.bias {
            v.push(("bias".to_string(), b));
        }
        v
    }
}

impl Module for BnState {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("gamma".into(), &self.gamma), ("beta".into(), &self.beta)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("gamma".into(), &mut self.gamma), ("beta".into(), &mut self.beta)]
    }

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("running_mean".into(), &self.running_mean),
            ("running_var".into(), &self.running_var),
        ]
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("running_mean".into(), &mut self.running_mean),
            ("running_var".into(), &mut self.running_var),
        ]
    }
}

/// `grad` must have the same parameter layout as `module`.
pub fn check_layout<M: Module>(module: &M, grad: &M, op: &'static str) -> Result<()> {
    let a = module.params();
    let b = grad.params();
    if a.len() != b.len()
        || a.iter()
            .zip(&b)
            .any(|((na, ta), (nb, tb))| na != nb || ta.shape() != tb.shape())
    {
        return Err(Error::shape(op, "gradient layout differs from the module"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_bias_added_per_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = Conv::new(1, 2, 1, 1, 0, true, Init::FanIn, &mut rng);
        c.weight = Tensor::zeros(&[2, 1, 1, 1]);
        c.bias = Some(Tensor::new(&[2], vec![0.5, -1.0]).unwrap());
        let y = c.forward(&Tensor::zeros(&[1, 1, 2, 2])).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5, 0.5, 0.5, -1.0, -1.0, -1.0, -1.0]);
    }

    #[test]
    fn init_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Linear::new(100, 10, true, Init::FanIn, &mut rng);
        assert!(l.weight.max_abs() <= 0.1);
        let c = Conv::new(4, 4, 3, 1, 1, false, Init::He, &mut rng);
        assert!(c.weight.max_abs() <= 6f64.sqrt() / 6.0);
        assert!(c.bias.is_none());
    }

    #[test]
    fn names_and_zero_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut l = Linear::new(3, 2, true, Init::FanIn, &mut rng);
        let names: Vec<String> = l.params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["weight", "bias"]);
        l.zero_grad();
        assert_eq!(l.grad_norm(), 0.0);
        assert_eq!(l.num_params(), 8);
    }
}
