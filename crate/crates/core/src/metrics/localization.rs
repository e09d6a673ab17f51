use serde::{Deserialize, Serialize};

use super::{mean, ratio, MetricFamily, MetricReport};
use crate::error::{LabError, Result};

/// Axis-aligned box in pixel coordinates, serialized as `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Bbox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl Bbox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x1 >= x2 || y1 >= y2 {
            return Err(LabError::Shape(format!("invalid box ({x1},{y1})-({x2},{y2})")));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

impl TryFrom<[f64; 4]> for Bbox {
    type Error = LabError;
    fn try_from(c: [f64; 4]) -> Result<Self> {
        Bbox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<Bbox> for [f64; 4] {
    fn from(b: Bbox) -> Self {
        b.coords()
    }
}

pub fn iou(a: &Bbox, b: &Bbox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub const COCO_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

/// One localization query; a missing prediction scores IoU 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub id: String,
    pub pred: Option<Bbox>,
    pub truth: Bbox,
}

/// mIoU, AP@50, AP@75 and COCOAP for one box per query. With a single
/// prediction per query, AP at a threshold is the fraction of queries whose
/// IoU reaches it.
pub fn localization_metrics(records: &[BoxRecord]) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(LabError::Empty("localization records"));
    }
    let ious: Vec<f64> = records.iter().map(|r| r.pred.map_or(0.0, |p| iou(&p, &r.truth))).collect();
    let pass = |tau: f64| ratio(ious.iter().filter(|&&v| v >= tau).count(), ious.len());
    let mut report = MetricReport::new(MetricFamily::Localization, records.len());
    report.put("miou", mean(&ious));
    report.put("ap50", pass(0.50));
    report.put("ap75", pass(0.75));
    report.put("cocoap", mean(&COCO_THRESHOLDS.map(pass)));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> Bbox {
        Bbox::new(x1, y1, x2, y2).unwrap()
    }

    fn query(id: &str, pred: Option<Bbox>, truth: Bbox) -> BoxRecord {
        BoxRecord { id: id.into(), pred, truth }
    }

    #[test]
    fn identical_and_disjoint() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 30.0, 30.0)), 0.0);
        // touching edges share no area
        assert_eq!(iou(&a, &bx(10.0, 0.0, 20.0, 10.0)), 0.0);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(Bbox::new(5.0, 0.0, 5.0, 1.0).is_err());
        assert!(Bbox::new(0.0, 2.0, 1.0, 1.0).is_err());
        assert!(Bbox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
        assert!(serde_json::from_str::<Bbox>("[3,3,1,1]").is_err());
    }

    #[test]
    fn all_perfect() {
        let b = bx(1.0, 2.0, 3.0, 4.0);
        let m = localization_metrics(&[query("q", Some(b), b)]).unwrap();
        assert!(m.metrics.values().all(|&v| v == 100.0));
    }

    #[test]
    fn single_query_threshold_count() {
        // 0.945 passes 0.50 ..= 0.90 and fails 0.95
        let truth = bx(328.0, 531.0, 987.0, 1049.0);
        let pred = bx(327.0, 506.0, 984.0, 1047.0);
        let m = localization_metrics(&[query("q", Some(pred), truth)]).unwrap();
        assert_eq!(m.get("ap50"), Some(100.0));
        assert_eq!(m.get("ap75"), Some(100.0));
        assert!((m.get("cocoap").unwrap() - 90.0).abs() < 1e-9);
    }

    #[test]
    fn two_queries_and_missing_box() {
        let t = bx(0.0, 0.0, 10.0, 10.0);
        let hi = bx(0.0, 0.0, 10.0, 6.0); // 0.6
        let lo = bx(0.0, 0.0, 10.0, 4.0); // 0.4
        let m = localization_metrics(&[query("a", Some(hi), t), query("b", Some(lo), t)]).unwrap();
        assert_eq!(m.get("ap50"), Some(50.0));
        let m = localization_metrics(&[query("a", None, t), query("b", Some(t), t)]).unwrap();
        assert_eq!(m.get("miou"), Some(50.0));
    }

    fn arb_box() -> impl Strategy<Value = Bbox> {
        (0.0..100.0f64, 0.0..100.0f64, 0.1..50.0f64, 0.1..50.0f64).prop_map(|(x, y, w, h)| bx(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let v = iou(&a, &b);
            prop_assert_eq!(v, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn record_order_does_not_matter(
            (recs, shuffled) in proptest::collection::vec((proptest::option::of(arb_box()), arb_box()), 1..10)
                .prop_map(|v| v.into_iter().enumerate().map(|(i, (p, t))| query(&format!("q{i}"), p, t)).collect::<Vec<_>>())
                .prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle()))
        ) {
            let a = localization_metrics(&recs).unwrap();
            let b = localization_metrics(&shuffled).unwrap();
            for (k, v) in &a.metrics {
                prop_assert!((v - b.metrics[k]).abs() < 1e-9);
                prop_assert!((0.0..=100.0).contains(v));
            }
        }
    }
}
