//! Bounding-box arithmetic: IoU and greedy non-maximum suppression.
//!
//! Coordinates are continuous pixel positions; a box covering `[x1, x2)` has
//! width `x2 - x1` (no `+1` pixel convention).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle `[x1, y1, x2, y2]` with strictly positive area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let invalid = |reason| Error::InvalidBox {
            x1,
            y1,
            x2,
            y2,
            reason,
        };
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(invalid("coordinates must be finite"));
        }
        if x2 <= x1 || y2 <= y1 {
            return Err(invalid("x2 > x1 and y2 > y1 required"));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from([x1, y1, x2, y2]: [f64; 4]) -> Result<Self> {
        BBox::new(x1, y1, x2, y2)
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Greedy NMS over `(box, score)` pairs.
///
/// Returns indices into `detections` of the kept entries, ordered by
/// descending score (ties keep input order). A candidate is discarded iff its
/// IoU with an already kept box is strictly greater than `threshold`, so a
/// threshold of `1.0` keeps everything.
pub fn nms(detections: &[(BBox, f64)], threshold: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidParam(format!(
            "NMS threshold {threshold} outside [0, 1]"
        )));
    }
    if let Some((_, s)) = detections.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::InvalidParam(format!("non-finite NMS score {s}")));
    }

    let order = descending_order(detections.iter().map(|(_, s)| *s));
    let mut suppressed = vec![false; detections.len()];
    let mut keep = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[rank + 1..] {
            if !suppressed[j] && iou(&detections[i].0, &detections[j].0) > threshold {
                suppressed[j] = true;
            }
        }
    }
    Ok(keep)
}

/// Indices sorted by descending value; equal values keep their input order.
pub(crate) fn descending_order(values: impl Iterator<Item = f64>) -> Vec<usize> {
    let values: Vec<f64> = values.collect();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(Ordering::Equal)
    });
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    /// Counts unit pixels covered by integer-aligned boxes.
    fn grid_iou(a: [i32; 4], c: [i32; 4]) -> f64 {
        let inside = |r: [i32; 4], x: i32, y: i32| x >= r[0] && x < r[2] && y >= r[1] && y < r[3];
        let (mut inter, mut union) = (0, 0);
        for x in -50..50 {
            for y in -50..50 {
                let (ia, ic) = (inside(a, x, y), inside(c, x, y));
                inter += (ia && ic) as i32;
                union += (ia || ic) as i32;
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BBox::new(0.0, 0.0, 0.0, 5.0).is_err());
        assert!(BBox::new(0.0, 5.0, 3.0, 1.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(20.0, 20.0, 30.0, 30.0)), 0.0);
        // touching edges share no area
        assert_eq!(iou(&a, &b(10.0, 0.0, 20.0, 10.0)), 0.0);

        let expected = grid_iou([0, 0, 10, 10], [5, 0, 15, 10]);
        assert!((expected - 1.0 / 3.0).abs() < 1e-15);
        assert!((iou(&a, &b(5.0, 0.0, 15.0, 10.0)) - expected).abs() < 1e-12);
    }

    #[test]
    fn iou_matches_pixel_grid() {
        let cases = [
            ([0, 0, 10, 10], [3, 4, 12, 9]),
            ([-5, -5, 5, 5], [0, 0, 20, 3]),
            ([1, 1, 2, 2], [0, 0, 3, 3]),
            ([0, 0, 7, 30], [2, 10, 9, 11]),
        ];
        for (a, c) in cases {
            let f = |r: [i32; 4]| b(r[0] as f64, r[1] as f64, r[2] as f64, r[3] as f64);
            assert!((iou(&f(a), &f(c)) - grid_iou(a, c)).abs() < 1e-12);
        }
    }

    #[test]
    fn nms_examples() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(nms(&[], 0.5).unwrap(), Vec::<usize>::new());
        assert_eq!(nms(&[(a, 0.3)], 0.0).unwrap(), vec![0]);
        assert_eq!(nms(&[(a, 0.8), (a, 0.9)], 0.5).unwrap(), vec![1]);
        // identical boxes survive a threshold of 1.0
        assert_eq!(nms(&[(a, 0.8), (a, 0.9)], 1.0).unwrap(), vec![1, 0]);
    }

    #[test]
    fn nms_ties_keep_input_order() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        let c = b(100.0, 0.0, 110.0, 10.0);
        assert_eq!(nms(&[(a, 0.5), (c, 0.5)], 0.5).unwrap(), vec![0, 1]);
        assert_eq!(nms(&[(a, 0.5), (a, 0.5)], 0.5).unwrap(), vec![0]);
    }

    #[test]
    fn nms_threshold_is_strict() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        let c = b(5.0, 0.0, 15.0, 10.0);
        let t = iou(&a, &c);
        assert_eq!(nms(&[(a, 0.9), (c, 0.8)], t).unwrap(), vec![0, 1]);
        assert_eq!(nms(&[(a, 0.9), (c, 0.8)], t - 1e-9).unwrap(), vec![0]);
    }

    #[test]
    fn nms_rejects_bad_input() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert!(nms(&[(a, 0.5)], 1.5).is_err());
        assert!(nms(&[(a, 0.5)], -0.1).is_err());
        assert!(nms(&[(a, f64::NAN)], 0.5).is_err());
    }

    #[test]
    fn bbox_serde_as_corner_array() {
        let a = b(1.5, 2.0, 3.0, 4.25);
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, "[1.5,2.0,3.0,4.25]");
        assert_eq!(serde_json::from_str::<BBox>(&s).unwrap(), a);
        assert!(serde_json::from_str::<BBox>("[3.0,0.0,1.0,1.0]").is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..100.0f64, 0.0..100.0f64, 0.5..40.0f64, 0.5..40.0f64)
            .prop_map(|(x, y, w, h)| b(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let v = iou(&a, &c);
            prop_assert_eq!(v, iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn nms_is_idempotent(
            items in prop::collection::vec((arb_box(), 0.0..1.0f64), 0..20),
            t in 0.0..1.0f64,
        ) {
            let kept = nms(&items, t).unwrap();
            let sub: Vec<_> = kept.iter().map(|&i| items[i]).collect();
            let again = nms(&sub, t).unwrap();
            prop_assert_eq!(again, (0..sub.len()).collect::<Vec<_>>());
        }
    }
}
