use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::assignment::{hungarian_assign, Assignment};
use crate::error::{Error, Result};
use crate::metrics::ap::match_class;
use crate::metrics::open_set::group_by_label;
use crate::types::{ClassLabel, Detection, GroundTruthObject};

/// Predicted unknown class id -> ground-truth unknown class id (or `None`
/// when the predicted class was left unassigned).
pub type UnknownPermutation = BTreeMap<u32, Option<u32>>;

#[derive(Debug, Clone, PartialEq)]
pub struct UcMap {
    pub value: f64,
    pub permutation: UnknownPermutation,
    /// AP of predicted class (row) against ground-truth class (column).
    pub gain: Array2<f64>,
    pub predicted_classes: Vec<u32>,
    pub gt_classes: Vec<u32>,
}

fn unknown_ids<T>(groups: &BTreeMap<ClassLabel, Vec<T>>) -> Vec<u32> {
    groups
        .keys()
        .filter_map(|l| match l {
            ClassLabel::Unknown(id) => Some(*id),
            _ => None,
        })
        .collect()
}

/// mAP over the ground-truth unknown classes after relabeling predicted
/// unknown classes with the correspondence that maximises it.
pub fn uc_map(dets: &[Detection], gts: &[GroundTruthObject], iou_threshold: f64) -> Result<UcMap> {
    let gt_groups = group_by_label(gts, |g| g.label);
    let gt_classes = unknown_ids(&gt_groups);
    if gt_classes.is_empty() {
        return Err(Error::NoUnknownGroundTruth);
    }
    let det_groups = group_by_label(dets, |d| d.label);
    let predicted_classes = unknown_ids(&det_groups);

    let cells: Vec<(usize, usize)> = (0..predicted_classes.len())
        .flat_map(|u| (0..gt_classes.len()).map(move |v| (u, v)))
        .collect();
    let aps: Vec<f64> = cells
        .par_iter()
        .map(|&(u, v)| {
            let class_dets: Vec<&Detection> = det_groups[&ClassLabel::Unknown(predicted_classes[u])]
                .iter()
                .map(|&i| &dets[i])
                .collect();
            let class_gts: Vec<&GroundTruthObject> = gt_groups[&ClassLabel::Unknown(gt_classes[v])]
                .iter()
                .map(|&i| &gts[i])
                .collect();
            match_class(&class_dets, &class_gts, iou_threshold).average_precision()
        })
        .collect();
    let gain = Array2::from_shape_vec((predicted_classes.len(), gt_classes.len()), aps)
        .expect("gain matrix shape");

    let (value, assignment) = best_mean_ap(gain.view())?;
    let permutation = assignment
        .row_to_col
        .iter()
        .enumerate()
        .map(|(u, col)| (predicted_classes[u], col.map(|v| gt_classes[v])))
        .collect();
    Ok(UcMap {
        value,
        permutation,
        gain,
        predicted_classes,
        gt_classes,
    })
}

/// Best mean over ground-truth classes (columns) of an AP gain matrix;
/// columns left without a predicted class contribute 0.
pub fn best_mean_ap(gain: ArrayView2<'_, f64>) -> Result<(f64, Assignment)> {
    let cols = gain.ncols();
    if cols == 0 {
        return Err(Error::NoUnknownGroundTruth);
    }
    let assignment = hungarian_assign(gain)?;
    let mut per_gt = vec![0.0; cols];
    for (u, col) in assignment.row_to_col.iter().enumerate() {
        if let Some(v) = *col {
            per_gt[v] = gain[[u, v]];
        }
    }
    Ok((per_gt.iter().sum::<f64>() / cols as f64, assignment))
}

/// Pooled recall over all unknown ground truth after relabeling predicted
/// unknown classes through `permutation`.
pub fn uc_recall(
    dets: &[Detection],
    gts: &[GroundTruthObject],
    iou_threshold: f64,
    permutation: &UnknownPermutation,
) -> Result<f64> {
    let gt_groups = group_by_label(gts, |g| g.label);
    let total: usize = gt_groups
        .iter()
        .filter(|(l, _)| l.is_unknown())
        .map(|(_, v)| v.len())
        .sum();
    if total == 0 {
        return Err(Error::NoUnknownGroundTruth);
    }
    let det_groups = group_by_label(dets, |d| d.label);
    let mut hits = 0usize;
    for (pred, target) in permutation {
        let Some(target) = target else { continue };
        let (Some(det_idx), Some(gt_idx)) = (
            det_groups.get(&ClassLabel::Unknown(*pred)),
            gt_groups.get(&ClassLabel::Unknown(*target)),
        ) else {
            continue;
        };
        let class_dets: Vec<&Detection> = det_idx.iter().map(|&i| &dets[i]).collect();
        let class_gts: Vec<&GroundTruthObject> = gt_idx.iter().map(|&i| &gts[i]).collect();
        hits += match_class(&class_dets, &class_gts, iou_threshold).true_positives();
    }
    Ok(hits as f64 / total as f64)
}
