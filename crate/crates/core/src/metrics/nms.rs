use std::cmp::Ordering;

use crate::types::BBox;

/// Indices sorted by score descending; equal scores keep insertion order.
pub(crate) fn rank_by_score(scores: impl IntoIterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.into_iter().collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy non-maximum suppression. Returns kept indices in descending score
/// order. A box is kept iff its IoU with every previously kept box is at most
/// `iou_threshold`.
pub fn nms(dets: &[(BBox, f64)], iou_threshold: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in rank_by_score(dets.iter().map(|d| d.1)) {
        let bx = &dets[i].0;
        if kept.iter().all(|&k| dets[k].0.iou(bx) <= iou_threshold) {
            kept.push(i);
        }
    }
    kept
}
