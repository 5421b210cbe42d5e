//! Open-world evaluation: NMS, per-class AP, wilderness impact, absolute
//! open-set error, and the unknown-class metrics UC-mAP / UC-Recall that
//! match predicted unknown classes to ground-truth unknown classes with the
//! Hungarian method.

mod ap;
mod nms;
mod open_set;
mod unknown;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use ap::{ap_from_ranked_flags, average_precision, match_class, ClassMatch};
pub use nms::nms;
pub use open_set::{a_ose, match_known, wilderness_impact, MatchResult, WildernessImpact};
pub use unknown::{best_mean_ap, uc_map, uc_recall, UcMap, UnknownPermutation};

use crate::error::{Error, Result};
use crate::types::{ClassLabel, Detection, GroundTruthObject};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    /// Detections scoring below this are dropped before any metric.
    pub score_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            score_threshold: DEFAULT_SCORE_THRESHOLD,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "iou threshold {} must lie in (0, 1]",
                self.iou_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::InvalidConfig(format!(
                "score threshold {} must lie in [0, 1]",
                self.score_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub map_known: f64,
    pub wi: f64,
    /// True when there were no known detections and `wi` is reported as 0.
    pub wi_undefined: bool,
    pub a_ose: usize,
    pub uc_map: f64,
    pub uc_recall: f64,
    pub permutation: UnknownPermutation,
}

/// Mean AP over the given classes, computed per class in parallel and summed
/// in class order.
pub fn mean_average_precision(
    dets: &[Detection],
    gts: &[GroundTruthObject],
    classes: &[ClassLabel],
    iou_threshold: f64,
) -> f64 {
    if classes.is_empty() {
        return 0.0;
    }
    let aps: Vec<f64> = classes
        .par_iter()
        .map(|label| {
            let d: Vec<&Detection> = dets.iter().filter(|d| d.label == *label).collect();
            let g: Vec<&GroundTruthObject> = gts.iter().filter(|g| g.label == *label).collect();
            average_precision(&d, &g, iou_threshold)
        })
        .collect();
    aps.iter().sum::<f64>() / classes.len() as f64
}

/// Pooled recall of correctly-labeled detections over the given classes.
pub fn pooled_recall(
    dets: &[Detection],
    gts: &[GroundTruthObject],
    classes: &[ClassLabel],
    iou_threshold: f64,
) -> f64 {
    let mut hits = 0;
    let mut total = 0;
    for label in classes {
        let d: Vec<&Detection> = dets.iter().filter(|d| d.label == *label).collect();
        let g: Vec<&GroundTruthObject> = gts.iter().filter(|g| g.label == *label).collect();
        let m = match_class(&d, &g, iou_threshold);
        hits += m.true_positives();
        total += m.num_gt;
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Distinct ground-truth labels satisfying `keep`, in label order.
pub fn gt_classes(gts: &[GroundTruthObject], keep: impl Fn(&ClassLabel) -> bool) -> Vec<ClassLabel> {
    let mut out: Vec<ClassLabel> = gts.iter().map(|g| g.label).filter(|l| keep(l)).collect();
    out.sort();
    out.dedup();
    out
}

/// Computes every metric of the open-world protocol in one pass. Known mAP
/// averages over the known classes present in the ground truth.
pub fn evaluate(
    gts: &[GroundTruthObject],
    dets: &[Detection],
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let iou = config.iou_threshold;
    let dets: Vec<Detection> = dets
        .iter()
        .filter(|d| d.score >= config.score_threshold)
        .copied()
        .collect();

    let known = gt_classes(gts, ClassLabel::is_known);
    let map_known = mean_average_precision(&dets, gts, &known, iou);

    let matched = match_known(&dets, gts, iou);
    let a_ose = open_set::a_ose_with(&dets, gts, &matched, iou);
    let wi = wilderness_impact(&matched, a_ose);

    let ucm = uc_map(&dets, gts, iou)?;
    let uc_recall = uc_recall(&dets, gts, iou, &ucm.permutation)?;

    Ok(EvalReport {
        map_known,
        wi: wi.value,
        wi_undefined: wi.undefined,
        a_ose,
        uc_map: ucm.value,
        uc_recall,
        permutation: ucm.permutation,
    })
}
