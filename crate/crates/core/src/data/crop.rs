use super::scene::SceneSample;
use crate::error::{Error, Result};
use crate::roi::BBox;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct CropSample {
    /// 3×h×w
    pub image: Tensor,
    pub identity_id: usize,
}

/// Bilinear resampling of `region` of a C×H×W image onto an `out_h × out_w`
/// grid. Output pixel centres are spread evenly over the region (half-pixel
/// convention); reads outside the image clamp to the border.
pub fn resize_region(image: &Tensor, region: &BBox, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = image.dims3("resize_region")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize_region", "empty output size"));
    }
    let sy = region.height() / out_h as f64;
    let sx = region.width() / out_w as f64;
    let taps = |pos: f64, len: usize| {
        let p = pos.clamp(0.0, (len - 1) as f64);
        let lo = p.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, p - lo as f64)
    };
    let ys: Vec<_> = (0..out_h)
        .map(|i| taps(region.y1 + (i as f64 + 0.5) * sy - 0.5, h))
        .collect();
    let xs: Vec<_> = (0..out_w)
        .map(|j| taps(region.x1 + (j as f64 + 0.5) * sx - 0.5, w))
        .collect();
    let src = image.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

pub fn resize_image(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, h, w) = image.dims3("resize_image")?;
    resize_region(image, &BBox::new(0.0, 0.0, w as f64, h as f64), out_h, out_w)
}

/// One crop per labeled instance, in scene order; unlabeled instances are
/// skipped.
pub fn crop_instances(scenes: &[SceneSample], crop_h: usize, crop_w: usize) -> Result<Vec<CropSample>> {
    let mut crops = Vec::new();
    for scene in scenes {
        for b in &scene.instances {
            if let Some(id) = b.identity {
                crops.push(CropSample {
                    image: resize_region(&scene.image, b, crop_h, crop_w)?,
                    identity_id: id,
                });
            }
        }
    }
    Ok(crops)
}

/// Longest-side-capped rescaling: a shorter side below `shorter_min` is
/// brought up to it, then if the longer side exceeds `longer_max` it is set
/// to `longer_max`. One factor is applied to both sides. Returns the image
/// and the factor.
pub fn scale_scene(image: &Tensor, shorter_min: usize, longer_max: usize) -> Result<(Tensor, f64)> {
    let (_, h, w) = image.dims3("scale_scene")?;
    if shorter_min == 0 || longer_max == 0 {
        return Err(Error::invalid("scale_scene", "bounds must be positive"));
    }
    let (short, long) = (h.min(w) as f64, h.max(w) as f64);
    let mut factor = (shorter_min as f64 / short).max(1.0);
    if long * factor > longer_max as f64 {
        factor = longer_max as f64 / long;
    }
    if factor == 1.0 {
        return Ok((image.clone(), 1.0));
    }
    let oh = (h as f64 * factor).round().max(1.0) as usize;
    let ow = (w as f64 * factor).round().max(1.0) as usize;
    Ok((resize_image(image, oh, ow)?, factor))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_region_stays_constant() {
        let img = Tensor::full(&[3, 20, 20], 0.37);
        let out = resize_region(&img, &BBox::new(2.5, 3.0, 11.0, 19.0), 32, 16).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn checkerboard_upsample_by_hand() {
        // Output centres map to source coordinates -0.25, 0.25, 0.75, 1.25,
        // clamped to 0, 0.25, 0.75, 1, giving interpolation weights
        // 0, 0.25, 0.75, 1 along each axis.
        let img = Tensor::new(&[1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let out = resize_image(&img, 4, 4).unwrap();
        let t = [0.0, 0.25, 0.75, 1.0];
        for i in 0..4 {
            for j in 0..4 {
                let want = t[i] + t[j] - 2.0 * t[i] * t[j];
                assert!((out.get(&[0, i, j]) - want).abs() < 1e-15, "({i},{j})");
            }
        }
    }

    #[test]
    fn counts_labeled_only() {
        let scene = SceneSample {
            image: Tensor::full(&[3, 40, 40], 0.5),
            instances: vec![
                BBox::new(0.0, 0.0, 10.0, 20.0).with_identity(Some(1)),
                BBox::new(5.0, 5.0, 15.0, 25.0).with_identity(Some(2)),
                BBox::new(20.0, 0.0, 30.0, 20.0).with_identity(None),
                BBox::new(20.0, 10.0, 30.0, 30.0).with_identity(Some(1)),
            ],
        };
        let crops = crop_instances(&[scene], 32, 16).unwrap();
        assert_eq!(crops.len(), 3);
        assert_eq!(crops.iter().map(|c| c.identity_id).collect::<Vec<_>>(), vec![1, 2, 1]);
        assert_eq!(crops[0].image.shape(), &[3, 32, 16]);
    }

    #[test]
    fn scale_rules() {
        let (_, f) = scale_scene(&Tensor::zeros(&[1, 640, 960]), 640, 960).unwrap();
        assert_eq!(f, 1.0);
        let (out, f) = scale_scene(&Tensor::zeros(&[1, 320, 480]), 640, 960).unwrap();
        assert_eq!((f, out.shape()), (2.0, &[1usize, 640, 960][..]));
        let (out, f) = scale_scene(&Tensor::zeros(&[1, 1000, 1000]), 640, 960).unwrap();
        assert_eq!((f, out.shape()), (0.96, &[1usize, 960, 960][..]));
    }
}
