use rand::Rng;
use serde::{Deserialize, Serialize};

use super::crop::CropSample;
use super::scene::SceneSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reverse the width axis of a C×H×W image.
pub fn flip_image(image: &Tensor) -> Tensor {
    let shape = image.shape();
    let w = shape[shape.len() - 1];
    let mut out = image.clone();
    for (dst, src) in out.data_mut().chunks_mut(w).zip(image.data().chunks(w)) {
        for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
            *d = *s;
        }
    }
    out
}

pub trait HorizontalFlip: Sized {
    fn flipped(&self) -> Self;
}

impl HorizontalFlip for CropSample {
    fn flipped(&self) -> Self {
        CropSample {
            image: flip_image(&self.image),
            identity_id: self.identity_id,
        }
    }
}

impl HorizontalFlip for SceneSample {
    fn flipped(&self) -> Self {
        let w = *self.image.shape().last().expect("rank 3") as f64;
        SceneSample {
            image: flip_image(&self.image),
            instances: self.instances.iter().map(|b| b.flip_horizontal(w)).collect(),
        }
    }
}

/// Flip with probability `p`.
pub fn augment_flip<T: HorizontalFlip + Clone, R: Rng>(sample: &T, p: f64, rng: &mut R) -> Result<T> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("augment_flip", format!("probability {p}")));
    }
    Ok(if rng.gen_bool(p) {
        sample.flipped()
    } else {
        sample.clone()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EraseFill {
    /// Independent uniform noise per erased value.
    Random,
    Constant(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EraseParams {
    pub probability: f64,
    /// Erased area as a fraction of the image area.
    pub area: (f64, f64),
    /// Height-to-width ratio of the erased rectangle.
    pub aspect: (f64, f64),
    pub fill: EraseFill,
}

impl Default for EraseParams {
    fn default() -> Self {
        EraseParams {
            probability: 0.5,
            area: (0.02, 0.4),
            aspect: (0.3, 3.3),
            fill: EraseFill::Random,
        }
    }
}

impl EraseParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.probability)
            && 0.0 < self.area.0
            && self.area.0 <= self.area.1
            && self.area.1 <= 1.0
            && 0.0 < self.aspect.0
            && self.aspect.0 <= self.aspect.1;
        if !ok {
            return Err(Error::invalid("augment_random_erase", format!("{self:?}")));
        }
        Ok(())
    }
}

/// Picks the erase rectangle `(y, x, h, w)`, or `None` if no attempt fits.
/// Rounded rectangles whose area falls outside the configured fraction are
/// redrawn.
pub fn draw_erase_rect<R: Rng>(
    h: usize,
    w: usize,
    params: &EraseParams,
    rng: &mut R,
) -> Option<(usize, usize, usize, usize)> {
    let total = (h * w) as f64;
    let (la, lb) = (params.aspect.0.ln(), params.aspect.1.ln());
    for _ in 0..100 {
        let area = total * sample_range(rng, params.area);
        let aspect = sample_range(rng, (la, lb)).exp();
        let eh = (area * aspect).sqrt().round() as usize;
        let ew = (area / aspect).sqrt().round() as usize;
        let frac = (eh * ew) as f64 / total;
        if eh == 0 || ew == 0 || eh > h || ew > w || frac < params.area.0 || frac > params.area.1 {
            continue;
        }
        let y = rng.gen_range(0..=h - eh);
        let x = rng.gen_range(0..=w - ew);
        return Some((y, x, eh, ew));
    }
    None
}

fn sample_range<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

pub fn augment_random_erase<R: Rng>(sample: &CropSample, params: &EraseParams, rng: &mut R) -> Result<CropSample> {
    params.validate()?;
    let mut out = sample.clone();
    if !rng.gen_bool(params.probability) {
        return Ok(out);
    }
    let (c, h, w) = out.image.dims3("augment_random_erase")?;
    if let Some((y0, x0, eh, ew)) = draw_erase_rect(h, w, params, rng) {
        let data = out.image.data_mut();
        for ch in 0..c {
            for y in y0..y0 + eh {
                for x in x0..x0 + ew {
                    data[(ch * h + y) * w + x] = match params.fill {
                        EraseFill::Random => rng.gen_range(0.0..1.0),
                        EraseFill::Constant(v) => v,
                    };
                }
            }
        }
    }
    Ok(out)
}
