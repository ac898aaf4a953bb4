//! A generic object-classification set used as a stand-in for a broad
//! pretraining corpus: coloured geometric shapes on noisy backgrounds,
//! labelled by (shape, hue).

use rand::Rng;

use super::crop::CropSample;
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};
use crate::tensor::Tensor;

pub const SHAPES: usize = 4;
pub const HUES: [[f64; 3]; 4] = [[0.9, 0.2, 0.2], [0.2, 0.8, 0.3], [0.25, 0.35, 0.95], [0.95, 0.85, 0.2]];

pub fn generic_classes() -> usize {
    SHAPES * HUES.len()
}

fn inside(shape: usize, u: f64, v: f64) -> bool {
    // (u, v) in [-1, 1]² relative to the shape's bounding square.
    match shape {
        0 => u * u + v * v <= 1.0,
        1 => u.abs() <= 0.85 && v.abs() <= 0.85,
        2 => (-1.0..=1.0).contains(&v) && u.abs() <= (v + 1.0) * 0.5,
        _ => u.abs() <= 0.3 || v.abs() <= 0.3,
    }
}

/// `per_class` images of every class, class-major order.
pub fn generic_dataset(per_class: usize, h: usize, w: usize, seed: u64) -> Result<Vec<CropSample>> {
    if h < 8 || w < 8 {
        return Err(Error::invalid("generic_dataset", "images must be at least 8x8"));
    }
    let mut out = Vec::with_capacity(per_class * generic_classes());
    for class in 0..generic_classes() {
        let (shape, hue) = (class / HUES.len(), class % HUES.len());
        for k in 0..per_class {
            let mut rng = rng_for(seed, stream::GENERIC, (class * per_class + k) as u64);
            let bg: Vec<f64> = (0..3).map(|_| rng.gen_range(0.2..0.8)).collect();
            let radius = rng.gen_range(0.3..0.45) * w.min(h) as f64;
            let cy = rng.gen_range(radius..h as f64 - radius);
            let cx = rng.gen_range(radius..w as f64 - radius);
            let tint: Vec<f64> = HUES[hue].iter().map(|c| c * rng.gen_range(0.8..1.1)).collect();
            let mut img = vec![0.0; 3 * h * w];
            for y in 0..h {
                for x in 0..w {
                    let u = (x as f64 + 0.5 - cx) / radius;
                    let v = (y as f64 + 0.5 - cy) / radius;
                    let on = inside(shape, u, v);
                    for c in 0..3 {
                        let base = if on { tint[c] } else { bg[c] };
                        let noise: f64 = rng.gen_range(-0.08..0.08);
                        img[(c * h + y) * w + x] = (base + noise).clamp(0.0, 1.0);
                    }
                }
            }
            out.push(CropSample {
                image: Tensor::new(&[3, h, w], img)?,
                identity_id: class,
            });
        }
    }
    Ok(out)
}
