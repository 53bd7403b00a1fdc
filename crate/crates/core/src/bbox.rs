use serde::{Deserialize, Serialize};

/// Axis-aligned box in pixels: top-left corner plus width and height.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_xywh(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_xywh(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn translate(self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy, self.w, self.h)
    }
}

/// Intersection over union. Returns 0 when the union is empty, so zero-area
/// boxes never overlap anything.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    // widths are measured corner-to-corner so that iou(a, a) is exactly 1
    let (ax2, ay2) = (a.x + a.w, a.y + a.h);
    let (bx2, by2) = (b.x + b.w, b.y + b.h);
    let area_a = (ax2 - a.x).max(0.0) * (ay2 - a.y).max(0.0);
    let area_b = (bx2 - b.x).max(0.0) * (by2 - b.y).max(0.0);
    if area_a <= 0.0 || area_b <= 0.0 {
        return 0.0;
    }
    let iw = (ax2.min(bx2) - a.x.max(b.x)).max(0.0);
    let ih = (ay2.min(by2) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_boxes() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn disjoint_boxes() {
        assert_eq!(
            iou(&BBox::new(0.0, 0.0, 1.0, 1.0), &BBox::new(5.0, 5.0, 1.0, 1.0)),
            0.0
        );
    }

    #[test]
    fn partial_overlap() {
        // intersection 1, union 4 + 4 - 1
        let v = iou(&BBox::new(0.0, 0.0, 2.0, 2.0), &BBox::new(1.0, 1.0, 2.0, 2.0));
        assert!((v - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn zero_area() {
        let z = BBox::new(1.0, 1.0, 0.0, 5.0);
        assert_eq!(iou(&z, &z), 0.0);
        assert_eq!(iou(&z, &BBox::new(0.0, 0.0, 10.0, 10.0)), 0.0);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.0..40.0f64, 0.0..40.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
    }

    proptest! {
        #[test]
        fn symmetric(a in arb_box(), b in arb_box()) {
            prop_assert_eq!(iou(&a, &b), iou(&b, &a));
        }

        #[test]
        fn bounded_and_reflexive(a in arb_box(), b in arb_box()) {
            let v = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            if a.area() > 0.0 {
                prop_assert_eq!(iou(&a, &a), 1.0);
            }
        }

        #[test]
        fn translation_invariant(a in arb_box(), b in arb_box(), dx in -20i32..20, dy in -20i32..20) {
            // integer shifts keep the arithmetic exact enough to compare tightly
            let (dx, dy) = (dx as f64, dy as f64);
            let lhs = iou(&a.translate(dx, dy), &b.translate(dx, dy));
            prop_assert!((lhs - iou(&a, &b)).abs() < 1e-9);
        }
    }
}
