use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::SearchModel;
use crate::roi::BBox;
use crate::tensor::Tensor;

/// Channel mean of the high-level feature map of one image, h×w.
pub fn feature_heatmap(model: &SearchModel, image: &Tensor) -> Result<Tensor> {
    let (_, high) = model.forward_base(image)?;
    let (_, c, h, w) = high.dims4("feature_heatmap")?;
    let mut out = vec![0.0; h * w];
    for ch in 0..c {
        for (o, v) in out.iter_mut().zip(&high.data()[ch * h * w..(ch + 1) * h * w]) {
            *o += v / c as f64;
        }
    }
    Tensor::new(&[h, w], out)
}

/// Mean heat inside person boxes over the mean outside, judging each cell
/// by its centre in image coordinates. `None` when either side is empty or
/// the outside mean is zero.
pub fn activation_ratio(map: &Tensor, boxes: &[BBox], stride: usize) -> Option<f64> {
    let (h, w) = map.dims2("activation_ratio").ok()?;
    let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0usize, 0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            let cx = (x as f64 + 0.5) * stride as f64;
            let cy = (y as f64 + 0.5) * stride as f64;
            let v = map.data()[y * w + x];
            if boxes
                .iter()
                .any(|b| cx >= b.x1 && cx <= b.x2 && cy >= b.y1 && cy <= b.y2)
            {
                inside += v;
                n_in += 1;
            } else {
                outside += v;
                n_out += 1;
            }
        }
    }
    if n_in == 0 || n_out == 0 || outside == 0.0 {
        return None;
    }
    Some((inside / n_in as f64) / (outside / n_out as f64))
}

/// Binary 8-bit PGM, scaled so that the largest value maps to 255 and
/// negatives clamp to 0.
pub fn write_pgm(path: &Path, map: &Tensor) -> Result<()> {
    let (h, w) = map.dims2("write_pgm")?;
    let max = map.data().iter().copied().fold(0.0, f64::max);
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(map.data().iter().map(|&v| {
        if max > 0.0 {
            (v.max(0.0) / max * 255.0).round() as u8
        } else {
            0
        }
    }));
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_counts_cell_centres() {
        // 2×2 map at stride 8; the box covers the left column's centres.
        let map = Tensor::new(&[2, 2], vec![4.0, 1.0, 2.0, 1.0]).unwrap();
        let r = activation_ratio(&map, &[BBox::new(0.0, 0.0, 8.0, 16.0)], 8).unwrap();
        assert_eq!(r, 3.0);
        assert!(activation_ratio(&map, &[], 8).is_none());
    }

    #[test]
    fn pgm_header_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        write_pgm(&p, &Tensor::new(&[1, 3], vec![-1.0, 1.0, 2.0]).unwrap()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..11], b"P5\n3 1\n255\n");
        assert_eq!(&bytes[11..], &[0, 128, 255]);
    }
}
