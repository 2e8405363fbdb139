use serde::{Deserialize, Serialize};

use super::{by_confidence_desc, iou};
use crate::model::{Detection, TruthBox};

/// One detection after matching, in ranked (descending confidence) order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedDetection {
    pub confidence: f64,
    pub class_id: usize,
    pub true_positive: bool,
    /// Index into the ground-truth list of the matched truth, if any.
    pub matched_truth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub ranked: Vec<RankedDetection>,
    pub num_truths: usize,
    pub false_negatives: usize,
}

impl MatchOutcome {
    pub fn true_positives(&self) -> usize {
        self.ranked.iter().filter(|r| r.true_positive).count()
    }

    pub fn false_positives(&self) -> usize {
        self.ranked.len() - self.true_positives()
    }
}

/// Greedy matching of detections to ground truth within one image.
///
/// Detections are taken by descending confidence (ties in input order).
/// Each one claims the unmatched same-class truth with the highest IoU that
/// reaches `iou_thresh`, breaking IoU ties by the lowest truth index.
pub fn match_detections(dets: &[Detection], gts: &[TruthBox], iou_thresh: f64) -> MatchOutcome {
    let mut order: Vec<&Detection> = dets.iter().collect();
    by_confidence_desc(&mut order, |d| d.confidence);

    let mut taken = vec![false; gts.len()];
    let mut ranked = Vec::with_capacity(order.len());
    for d in order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if taken[gi] || gt.label.id != d.label.id {
                continue;
            }
            let overlap = iou(&d.bbox, &gt.bbox);
            if overlap <= 0.0 || overlap < iou_thresh {
                continue;
            }
            if best.is_none_or(|(_, b)| overlap > b) {
                best = Some((gi, overlap));
            }
        }
        if let Some((gi, _)) = best {
            taken[gi] = true;
        }
        ranked.push(RankedDetection {
            confidence: d.confidence,
            class_id: d.label.id,
            true_positive: best.is_some(),
            matched_truth: best.map(|(gi, _)| gi),
        });
    }
    let matched = taken.iter().filter(|t| **t).count();
    MatchOutcome {
        ranked,
        num_truths: gts.len(),
        false_negatives: gts.len() - matched,
    }
}
