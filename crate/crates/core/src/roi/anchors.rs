use super::BBox;

/// Full-scale anchor sizes, in multiples of the feature stride.
pub const ANCHOR_SIZES: [f64; 4] = [4.0, 8.0, 16.0, 32.0];
/// Desk-scale anchor sizes: sides of 16 to 40 pixels at stride 8, spanning
/// the person heights of the 64×96 synthetic scenes.
pub const DESK_ANCHOR_SIZES: [f64; 4] = [2.0, 3.0, 4.0, 5.0];
/// Height-to-width ratios.
pub const ANCHOR_RATIOS: [f64; 3] = [1.0, 2.0, 3.0];

/// Anchors for every location of an `h × w` feature map, location-major:
/// index `(y * w + x) * A + s * ratios.len() + r` where `A = sizes × ratios`.
///
/// A size `s` anchor with ratio `r` has area `(s·stride)²` and
/// `height / width = r`, centred on the image-space centre of its cell.
pub fn generate_anchors(feat_h: usize, feat_w: usize, stride: usize, sizes: &[f64], ratios: &[f64]) -> Vec<BBox> {
    let stride_f = stride as f64;
    let mut shapes = Vec::with_capacity(sizes.len() * ratios.len());
    for &s in sizes {
        let side = s * stride_f;
        for &r in ratios {
            let w = side / r.sqrt();
            let h = side * r.sqrt();
            shapes.push((w, h));
        }
    }
    let mut anchors = Vec::with_capacity(feat_h * feat_w * shapes.len());
    for y in 0..feat_h {
        let cy = (y as f64 + 0.5) * stride_f;
        for x in 0..feat_w {
            let cx = (x as f64 + 0.5) * stride_f;
            for &(w, h) in &shapes {
                anchors.push(BBox::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h));
            }
        }
    }
    anchors
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_anchors_per_location() {
        let a = generate_anchors(3, 5, 8, &ANCHOR_SIZES, &ANCHOR_RATIOS);
        assert_eq!(a.len(), 3 * 5 * 12);
    }

    #[test]
    fn single_location_shares_centre() {
        let a = generate_anchors(1, 1, 8, &ANCHOR_SIZES, &ANCHOR_RATIOS);
        for b in &a {
            let (cx, cy) = b.center();
            assert!((cx - 4.0).abs() < 1e-12 && (cy - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ratio_one_is_square_of_size_times_stride() {
        let a = generate_anchors(1, 1, 8, &[4.0], &[1.0]);
        assert!((a[0].width() - 32.0).abs() < 1e-12);
        assert!((a[0].height() - 32.0).abs() < 1e-12);
        let tall = generate_anchors(1, 1, 8, &[4.0], &[2.0]);
        assert!((tall[0].height() / tall[0].width() - 2.0).abs() < 1e-12);
        assert!((tall[0].area() - 1024.0).abs() < 1e-9);
    }
}
