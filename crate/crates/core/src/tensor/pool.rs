use super::Tensor;
use crate::error::Result;

/// NCHW → NC by averaging each channel plane.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4("global_avg_pool")?;
    let area = (h * w) as f64;
    let data = input
        .data()
        .chunks(h * w)
        .map(|plane| plane.iter().sum::<f64>() / area)
        .collect();
    Tensor::new(&[n, c], data)
}

pub fn global_avg_pool_backward(grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let plane = input_shape[2] * input_shape[3];
    let scale = 1.0 / plane as f64;
    let mut data = Vec::with_capacity(grad_out.len() * plane);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g * scale, plane));
    }
    Tensor::new(input_shape, data)
}
