use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in continuous image coordinates; `(x1, y1)` is the
/// top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<usize>,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        debug_assert!(x1 <= x2 && y1 <= y2, "inverted box {x1},{y1},{x2},{y2}");
        BBox {
            x1,
            y1,
            x2,
            y2,
            score: None,
            identity: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn with_identity(mut self, identity: Option<usize>) -> Self {
        self.identity = identity;
        self
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    /// Clamp to `[0, width] × [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> BBox {
        let cx = |v: f64| v.clamp(0.0, width);
        let cy = |v: f64| v.clamp(0.0, height);
        BBox {
            x1: cx(self.x1),
            y1: cy(self.y1),
            x2: cx(self.x2),
            y2: cy(self.y2),
            ..*self
        }
    }

    /// Mirror across the vertical axis of an image of the given width.
    pub fn flip_horizontal(&self, width: f64) -> BBox {
        BBox {
            x1: width - self.x2,
            x2: width - self.x1,
            ..*self
        }
    }

    pub fn scaled(&self, factor: f64) -> BBox {
        BBox {
            x1: self.x1 * factor,
            y1: self.y1 * factor,
            x2: self.x2 * factor,
            y2: self.y2 * factor,
            ..*self
        }
    }

    pub fn is_within(&self, width: f64, height: f64) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width && self.y2 <= height
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Regression target `(dx, dy, dw, dh)` taking `anchor` onto `target`.
pub fn encode_box(target: &BBox, anchor: &BBox) -> Result<[f64; 4]> {
    let (aw, ah) = (anchor.width(), anchor.height());
    if aw <= 0.0 || ah <= 0.0 {
        return Err(Error::invalid("encode_box", format!("anchor has size {aw}x{ah}")));
    }
    let (tw, th) = (target.width(), target.height());
    if tw <= 0.0 || th <= 0.0 {
        return Err(Error::invalid("encode_box", format!("target has size {tw}x{th}")));
    }
    let (acx, acy) = anchor.center();
    let (tcx, tcy) = target.center();
    Ok([(tcx - acx) / aw, (tcy - acy) / ah, (tw / aw).ln(), (th / ah).ln()])
}

/// Largest log-scale step the detector feeds to [`decode_box`]; predicted
/// deltas are clamped to it before decoding.
pub const MAX_LOG_SCALE: f64 = 4.135_166_556_742_356; // ln(1000 / 16)

pub fn clamp_delta(delta: &[f64; 4]) -> [f64; 4] {
    [
        delta[0],
        delta[1],
        delta[2].min(MAX_LOG_SCALE),
        delta[3].min(MAX_LOG_SCALE),
    ]
}

pub fn decode_box(delta: &[f64; 4], anchor: &BBox) -> Result<BBox> {
    let (aw, ah) = (anchor.width(), anchor.height());
    if aw <= 0.0 || ah <= 0.0 {
        return Err(Error::invalid("decode_box", format!("anchor has size {aw}x{ah}")));
    }
    let (acx, acy) = anchor.center();
    let cx = acx + delta[0] * aw;
    let cy = acy + delta[1] * ah;
    let w = aw * delta[2].exp();
    let h = ah * delta[3].exp();
    Ok(BBox::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h))
}

/// Greedy non-maximum suppression. Returns indices of kept boxes in
/// descending score order; equal scores keep the lower index first. Boxes
/// without a score are treated as score 0.
pub fn nms(boxes: &[BBox], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        let sa = boxes[a].score.unwrap_or(0.0);
        let sb = boxes[b].score.unwrap_or(0.0);
        sb.total_cmp(&sa).then(a.cmp(&b))
    });
    let mut keep: Vec<usize> = Vec::new();
    let mut suppressed = vec![false; boxes.len()];
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou(&boxes[i], &boxes[j]) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2)
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert!((iou(&a, &b(1.0, 1.0, 3.0, 3.0)) - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(iou(&b(1.0, 1.0, 1.0, 3.0), &b(1.0, 1.0, 1.0, 3.0)), 0.0);
    }

    #[test]
    fn encode_identity_and_log_width() {
        let a = b(10.0, 10.0, 20.0, 40.0);
        assert_eq!(encode_box(&a, &a).unwrap(), [0.0, 0.0, 0.0, 0.0]);
        let wide = b(5.0, 10.0, 25.0, 40.0);
        let d = encode_box(&wide, &a).unwrap();
        assert!((d[2] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(d[0], 0.0);
        assert!(encode_box(&a, &b(1.0, 1.0, 1.0, 5.0)).is_err());
        assert!(decode_box(&[0.0; 4], &b(1.0, 1.0, 1.0, 5.0)).is_err());
    }

    #[test]
    fn nms_basic_cases() {
        let single = [b(0.0, 0.0, 1.0, 1.0).with_score(0.3)];
        assert_eq!(nms(&single, 0.5), vec![0]);
        let twins = [
            b(0.0, 0.0, 4.0, 4.0).with_score(0.4),
            b(0.0, 0.0, 4.0, 4.0).with_score(0.9),
        ];
        assert_eq!(nms(&twins, 0.5), vec![1]);
    }

    #[test]
    fn flip_mirrors_coordinates() {
        let f = b(2.0, 3.0, 5.0, 9.0).flip_horizontal(20.0);
        assert_eq!((f.x1, f.y1, f.x2, f.y2), (15.0, 3.0, 18.0, 9.0));
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..50.0f64, 0.0..50.0f64, 0.1..30.0f64, 0.1..30.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let v = iou(&a, &c);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, iou(&c, &a));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn decode_inverts_encode(t in arb_box(), a in arb_box()) {
            let d = encode_box(&t, &a).unwrap();
            let back = decode_box(&d, &a).unwrap();
            prop_assert!((back.x1 - t.x1).abs() < 1e-9);
            prop_assert!((back.y1 - t.y1).abs() < 1e-9);
            prop_assert!((back.x2 - t.x2).abs() < 1e-9);
            prop_assert!((back.y2 - t.y2).abs() < 1e-9);
        }
    }
}
