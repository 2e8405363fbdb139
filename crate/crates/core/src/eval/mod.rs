//! Detection evaluation: overlap, suppression, matching against ground
//! truth, precision/recall curves and (mean) average precision.

mod matching;
mod metrics;
mod table;

pub use matching::{match_detections, MatchOutcome, RankedDetection};
pub use metrics::{
    average_precision, evaluate_at, map_at, map_range, pr_curve, precision_confidence_by_class,
    precision_confidence_curve, precision_recall_at, ClassAps, PrPoint, Scene, COCO_IOU_THRESHOLDS,
};
pub use table::{
    confidence_curve_csv, format_metrics_table, ingest_metrics_table, pr_curve_csv, MetricsReport,
};

use crate::model::{area, BoundingBox, Detection};

/// Intersection over union. Degenerate boxes have IoU 0 against anything.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    if union <= 0.0 || inter <= 0.0 {
        return 0.0;
    }
    (inter / union).min(1.0)
}

/// Stable descending-confidence order; ties keep input order.
pub(crate) fn by_confidence_desc<T>(items: &mut [T], conf: impl Fn(&T) -> f64) {
    items.sort_by(|a, b| conf(b).total_cmp(&conf(a)));
}

/// Greedy class-wise non-maximum suppression.
///
/// Detections are visited by descending confidence; a detection is dropped
/// when it overlaps an already kept detection of the same class with
/// IoU >= `iou_thresh`.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut order: Vec<&Detection> = dets.iter().collect();
    by_confidence_desc(&mut order, |d| d.confidence);

    let mut kept: Vec<Detection> = Vec::with_capacity(order.len());
    for d in order {
        let suppressed = kept
            .iter()
            .any(|k| k.label.id == d.label.id && iou(&k.bbox, &d.bbox) >= iou_thresh);
        if !suppressed {
            kept.push(d.clone());
        }
    }
    kept
}
