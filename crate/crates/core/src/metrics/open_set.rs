use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::metrics::ap::match_class;
use crate::types::{ClassLabel, Detection, GroundTruthObject};

/// Outcome of matching known-labeled detections to known ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// True-positive flag per detection (input order); always false for
    /// detections that are not labeled known.
    pub is_tp: Vec<bool>,
    /// Ground-truth index matched by each detection.
    pub matched_gt: Vec<Option<usize>>,
    pub tp_known: usize,
    pub fp_known: usize,
    /// Known ground truth left unmatched.
    pub false_negatives: usize,
}

impl MatchResult {
    pub fn known_detections(&self) -> usize {
        self.tp_known + self.fp_known
    }
}

pub(crate) fn group_by_label<'a, T, F>(items: &'a [T], label: F) -> BTreeMap<ClassLabel, Vec<usize>>
where
    F: Fn(&'a T) -> ClassLabel,
{
    let mut out: BTreeMap<ClassLabel, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        out.entry(label(item)).or_default().push(i);
    }
    out
}

/// Per-class greedy matching of every known-labeled detection.
pub fn match_known(
    dets: &[Detection],
    gts: &[GroundTruthObject],
    iou_threshold: f64,
) -> MatchResult {
    let det_groups = group_by_label(dets, |d| d.label);
    let gt_groups = group_by_label(gts, |g| g.label);
    let mut is_tp = vec![false; dets.len()];
    let mut matched_gt = vec![None; dets.len()];
    let mut tp_known = 0;
    let mut fp_known = 0;
    let mut gt_hit = vec![false; gts.len()];

    for (label, det_idx) in det_groups.iter().filter(|(l, _)| l.is_known()) {
        let gt_idx: &[usize] = gt_groups.get(label).map(Vec::as_slice).unwrap_or(&[]);
        let class_dets: Vec<&Detection> = det_idx.iter().map(|&i| &dets[i]).collect();
        let class_gts: Vec<&GroundTruthObject> = gt_idx.iter().map(|&i| &gts[i]).collect();
        let m = match_class(&class_dets, &class_gts, iou_threshold);
        for (local, matched) in m.matched_gt.iter().enumerate() {
            let d = det_idx[local];
            match matched {
                Some(g) => {
                    is_tp[d] = true;
                    matched_gt[d] = Some(gt_idx[*g]);
                    gt_hit[gt_idx[*g]] = true;
                    tp_known += 1;
                }
                None => fp_known += 1,
            }
        }
    }
    let false_negatives = gts
        .iter()
        .zip(&gt_hit)
        .filter(|(g, hit)| g.label.is_known() && !**hit)
        .count();
    MatchResult {
        is_tp,
        matched_gt,
        tp_known,
        fp_known,
        false_negatives,
    }
}

/// Number of unknown ground-truth objects covered (IoU >= threshold) by a
/// known-labeled detection that is not itself a known true positive. Each
/// object counts at most once.
pub fn a_ose(dets: &[Detection], gts: &[GroundTruthObject], iou_threshold: f64) -> usize {
    let matched = match_known(dets, gts, iou_threshold);
    a_ose_with(dets, gts, &matched, iou_threshold)
}

pub(crate) fn a_ose_with(
    dets: &[Detection],
    gts: &[GroundTruthObject],
    matched: &MatchResult,
    iou_threshold: f64,
) -> usize {
    let mut leaked: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, d) in dets.iter().enumerate() {
        if d.label.is_known() && !matched.is_tp[i] {
            leaked.entry(d.image_id).or_default().push(i);
        }
    }
    let mut counted = BTreeSet::new();
    for (g, gt) in gts.iter().enumerate() {
        if !gt.label.is_unknown() {
            continue;
        }
        let Some(cands) = leaked.get(&gt.image_id) else {
            continue;
        };
        if cands.iter().any(|&d| dets[d].bbox.iou(&gt.bbox) >= iou_threshold) {
            counted.insert(g);
        }
    }
    counted.len()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WildernessImpact {
    pub value: f64,
    /// Set when there were no known detections and the ratio is undefined;
    /// `value` is then 0.
    pub undefined: bool,
}

/// A-OSE normalised by the number of known detections (TP + FP).
pub fn wilderness_impact(matched: &MatchResult, a_ose: usize) -> WildernessImpact {
    let denom = matched.known_detections();
    if denom == 0 {
        log::warn!("wilderness impact undefined without known detections; reporting 0");
        return WildernessImpact {
            value: 0.0,
            undefined: true,
        };
    }
    WildernessImpact {
        value: a_ose as f64 / denom as f64,
        undefined: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::BBox;

    fn bx(x: f64) -> BBox {
        BBox::new(x, 0.0, 2.0, 2.0).unwrap()
    }

    fn counts(tp: usize, fp: usize) -> MatchResult {
        MatchResult {
            is_tp: vec![],
            matched_gt: vec![],
            tp_known: tp,
            fp_known: fp,
            false_negatives: 0,
        }
    }

    #[test]
    fn wi_formula() {
        assert_eq!(wilderness_impact(&counts(3, 4), 0).value, 0.0);
        assert_eq!(wilderness_impact(&counts(10, 10), 5).value, 0.25);
        assert_eq!(wilderness_impact(&counts(2, 5), 7).value, 1.0);
        let w = wilderness_impact(&counts(0, 0), 3);
        assert!(w.undefined);
        assert_eq!(w.value, 0.0);
    }

    #[test]
    fn a_ose_counts_objects_once() {
        let gts = [GroundTruthObject::new(0, ClassLabel::Unknown(5), bx(0.0)).unwrap()];
        assert_eq!(a_ose(&[], &gts, 0.5), 0);
        let one = [Detection::new(0, ClassLabel::Known(1), bx(0.0), 0.9).unwrap()];
        assert_eq!(a_ose(&one, &gts, 0.5), 1);
        let two = [
            Detection::new(0, ClassLabel::Known(1), bx(0.0), 0.9).unwrap(),
            Detection::new(0, ClassLabel::Known(2), bx(0.1), 0.8).unwrap(),
        ];
        assert_eq!(a_ose(&two, &gts, 0.5), 1);
        // unknown-labeled detections do not leak
        let unk = [Detection::new(0, ClassLabel::Unknown(5), bx(0.0), 0.9).unwrap()];
        assert_eq!(a_ose(&unk, &gts, 0.5), 0);
    }

    #[test]
    fn known_true_positive_does_not_count_as_open_set_error() {
        // a known object and an unknown object at the same location
        let gts = [
            GroundTruthObject::new(0, ClassLabel::Known(1), bx(0.0)).unwrap(),
            GroundTruthObject::new(0, ClassLabel::Unknown(5), bx(0.2)).unwrap(),
        ];
        let dets = [Detection::new(0, ClassLabel::Known(1), bx(0.0), 0.9).unwrap()];
        let m = match_known(&dets, &gts, 0.5);
        assert_eq!((m.tp_known, m.fp_known, m.false_negatives), (1, 0, 0));
        assert_eq!(a_ose(&dets, &gts, 0.5), 0);
    }

    #[test]
    fn match_counts() {
        let gts = [
            GroundTruthObject::new(0, ClassLabel::Known(0), bx(0.0)).unwrap(),
            GroundTruthObject::new(0, ClassLabel::Known(1), bx(10.0)).unwrap(),
        ];
        let dets = [
            Detection::new(0, ClassLabel::Known(0), bx(0.0), 0.9).unwrap(),
            Detection::new(0, ClassLabel::Known(0), bx(0.0), 0.8).unwrap(),
            Detection::new(0, ClassLabel::Known(0), bx(10.0), 0.7).unwrap(),
            Detection::new(0, ClassLabel::Unknown(4), bx(10.0), 0.7).unwrap(),
        ];
        let m = match_known(&dets, &gts, 0.5);
        assert_eq!(m.is_tp, vec![true, false, false, false]);
        assert_eq!(m.matched_gt, vec![Some(0), None, None, None]);
        assert_eq!((m.tp_known, m.fp_known, m.false_negatives), (1, 2, 1));
    }
}
