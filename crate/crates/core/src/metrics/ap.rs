use std::collections::HashMap;

use crate::metrics::nms::rank_by_score;
use crate::types::{Detection, GroundTruthObject};

/// Result of greedily matching one class worth of detections to ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMatch {
    /// Detection indices in descending score order.
    pub order: Vec<usize>,
    /// Ground-truth index matched by each detection (input order).
    pub matched_gt: Vec<Option<usize>>,
    pub num_gt: usize,
}

impl ClassMatch {
    pub fn true_positives(&self) -> usize {
        self.matched_gt.iter().filter(|m| m.is_some()).count()
    }

    /// TP flags in rank order.
    pub fn ranked_flags(&self) -> Vec<bool> {
        self.order.iter().map(|&i| self.matched_gt[i].is_some()).collect()
    }

    pub fn recall(&self) -> f64 {
        if self.num_gt == 0 {
            0.0
        } else {
            self.true_positives() as f64 / self.num_gt as f64
        }
    }

    pub fn average_precision(&self) -> f64 {
        ap_from_ranked_flags(&self.ranked_flags(), self.num_gt)
    }
}

/// Matches detections against ground truth of the same class. Detections are
/// visited by descending score; each takes the unmatched ground truth in the
/// same image with the highest IoU, provided it reaches `iou_threshold`.
/// Equal IoUs go to the lowest ground-truth index.
pub fn match_class(
    dets: &[&Detection],
    gts: &[&GroundTruthObject],
    iou_threshold: f64,
) -> ClassMatch {
    let mut by_image: HashMap<u64, Vec<usize>> = HashMap::new();
    for (g, gt) in gts.iter().enumerate() {
        by_image.entry(gt.image_id).or_default().push(g);
    }
    let order = rank_by_score(dets.iter().map(|d| d.score));
    let mut taken = vec![false; gts.len()];
    let mut matched_gt = vec![None; dets.len()];
    for &d in &order {
        let det = dets[d];
        let Some(candidates) = by_image.get(&det.image_id) else {
            continue;
        };
        let mut best: Option<(usize, f64)> = None;
        for &g in candidates {
            if taken[g] {
                continue;
            }
            let iou = det.bbox.iou(&gts[g].bbox);
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            matched_gt[d] = Some(g);
        }
    }
    ClassMatch {
        order,
        matched_gt,
        num_gt: gts.len(),
    }
}

/// All-point interpolated AP from TP flags listed in rank order.
pub fn ap_from_ranked_flags(flags: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 || flags.is_empty() {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (k, &hit) in flags.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // monotone envelope from the right
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let step = 1.0 / num_gt as f64;
    flags
        .iter()
        .zip(&precision)
        .filter(|(hit, _)| **hit)
        .map(|(_, p)| p * step)
        .sum()
}

/// Average precision of one class. All detections are assumed to carry the
/// class of `gts`; classes without ground truth score 0.
pub fn average_precision(
    dets: &[&Detection],
    gts: &[&GroundTruthObject],
    iou_threshold: f64,
) -> f64 {
    match_class(dets, gts, iou_threshold).average_precision()
}
