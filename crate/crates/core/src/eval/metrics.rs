use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::by_confidence_desc;
use super::matching::{match_detections, RankedDetection};
use crate::error::{Error, Result};
use crate::model::{Detection, TruthBox};

/// IoU thresholds 0.50, 0.55, ..., 0.95. Each is the double nearest to
/// `k / 100`, so an overlap of exactly 0.70 meets the 0.70 threshold.
pub const COCO_IOU_THRESHOLDS: [f64; 10] = [
    50.0 / 100.0,
    55.0 / 100.0,
    60.0 / 100.0,
    65.0 / 100.0,
    70.0 / 100.0,
    75.0 / 100.0,
    80.0 / 100.0,
    85.0 / 100.0,
    90.0 / 100.0,
    95.0 / 100.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub confidence: f64,
}

/// Detections and ground truth of a single image, in a shared pixel frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub detections: Vec<Detection>,
    pub truths: Vec<TruthBox>,
}

/// One point per rank: precision `TP@k / k`, recall `TP@k / num_gt`.
/// Recall is 0 when there is no ground truth.
pub fn pr_curve(ranked: &[RankedDetection], num_gt: usize) -> Vec<PrPoint> {
    let mut tp = 0usize;
    ranked
        .iter()
        .enumerate()
        .map(|(k, r)| {
            if r.true_positive {
                tp += 1;
            }
            PrPoint {
                recall: if num_gt == 0 {
                    0.0
                } else {
                    tp as f64 / num_gt as f64
                },
                precision: tp as f64 / (k + 1) as f64,
                confidence: r.confidence,
            }
        })
        .collect()
}

/// All-points interpolated AP: each precision is replaced by the maximum
/// precision at equal or higher recall, then integrated over recall from 0
/// to the curve's final recall.
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in curve.iter().zip(&envelope) {
        ap += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    ap
}

/// Per-class AP at one IoU threshold, and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAps {
    pub iou_threshold: f64,
    /// Keyed by class id; only classes with at least one ground truth.
    pub per_class: BTreeMap<usize, f64>,
    pub mean: f64,
}

/// Matches every scene at `iou_thresh` and pools the ranked detections of
/// all images per class. Pooled ties on confidence keep scene order.
fn pooled_outcomes(
    scenes: &[Scene],
    iou_thresh: f64,
) -> (
    BTreeMap<usize, Vec<RankedDetection>>,
    BTreeMap<usize, usize>,
) {
    let mut ranked: BTreeMap<usize, Vec<RankedDetection>> = BTreeMap::new();
    let mut num_gt: BTreeMap<usize, usize> = BTreeMap::new();
    for scene in scenes {
        for t in &scene.truths {
            *num_gt.entry(t.label.id).or_default() += 1;
        }
        let outcome = match_detections(&scene.detections, &scene.truths, iou_thresh);
        for r in outcome.ranked {
            ranked.entry(r.class_id).or_default().push(r);
        }
    }
    for list in ranked.values_mut() {
        by_confidence_desc(list, |r| r.confidence);
    }
    (ranked, num_gt)
}

pub fn evaluate_at(scenes: &[Scene], iou_thresh: f64) -> Result<ClassAps> {
    let (ranked, num_gt) = pooled_outcomes(scenes, iou_thresh);
    if num_gt.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let per_class: BTreeMap<usize, f64> = num_gt
        .iter()
        .map(|(&class, &n)| {
            let dets = ranked.get(&class).map(Vec::as_slice).unwrap_or(&[]);
            (class, average_precision(&pr_curve(dets, n)))
        })
        .collect();
    let mean = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(ClassAps {
        iou_threshold: iou_thresh,
        per_class,
        mean,
    })
}

/// Mean AP at one IoU threshold over classes that have ground truth.
pub fn map_at(scenes: &[Scene], iou_thresh: f64) -> Result<f64> {
    evaluate_at(scenes, iou_thresh).map(|r| r.mean)
}

/// Mean of [`map_at`] over [`COCO_IOU_THRESHOLDS`].
pub fn map_range(scenes: &[Scene]) -> Result<f64> {
    let mut sum = 0.0;
    for t in COCO_IOU_THRESHOLDS {
        sum += map_at(scenes, t)?;
    }
    Ok(sum / COCO_IOU_THRESHOLDS.len() as f64)
}

/// For each distinct confidence `c`, the precision of detections with
/// confidence >= `c`. Output is ordered by descending confidence.
pub fn precision_confidence_curve(ranked: &[RankedDetection]) -> Vec<(f64, f64)> {
    let mut sorted = ranked.to_vec();
    by_confidence_desc(&mut sorted, |r| r.confidence);

    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut tp = 0usize;
    for (k, r) in sorted.iter().enumerate() {
        if r.true_positive {
            tp += 1;
        }
        let precision = tp as f64 / (k + 1) as f64;
        match out.last_mut() {
            Some(last) if last.0 == r.confidence => last.1 = precision,
            _ => out.push((r.confidence, precision)),
        }
    }
    out
}

pub fn precision_confidence_by_class(
    ranked: &[RankedDetection],
) -> BTreeMap<usize, Vec<(f64, f64)>> {
    let mut by_class: BTreeMap<usize, Vec<RankedDetection>> = BTreeMap::new();
    for r in ranked {
        by_class.entry(r.class_id).or_default().push(*r);
    }
    by_class
        .into_iter()
        .map(|(c, list)| (c, precision_confidence_curve(&list)))
        .collect()
}

/// Pooled precision and recall over all classes, counting only detections
/// with confidence >= `conf_thresh`. Returns `(precision, recall, ranked)`
/// where `ranked` holds every detection regardless of confidence.
pub fn precision_recall_at(
    scenes: &[Scene],
    iou_thresh: f64,
    conf_thresh: f64,
) -> (f64, f64, Vec<RankedDetection>) {
    let mut ranked = Vec::new();
    let mut num_gt = 0usize;
    let mut tp = 0usize;
    let mut kept = 0usize;
    for scene in scenes {
        num_gt += scene.truths.len();
        let confident: Vec<Detection> = scene
            .detections
            .iter()
            .filter(|d| d.confidence >= conf_thresh)
            .cloned()
            .collect();
        let o = match_detections(&confident, &scene.truths, iou_thresh);
        tp += o.true_positives();
        kept += o.ranked.len();
        ranked.extend(match_detections(&scene.detections, &scene.truths, iou_thresh).ranked);
    }
    by_confidence_desc(&mut ranked, |r| r.confidence);
    let precision = if kept == 0 {
        0.0
    } else {
        tp as f64 / kept as f64
    };
    let recall = if num_gt == 0 {
        0.0
    } else {
        tp as f64 / num_gt as f64
    };
    (precision, recall, ranked)
}
