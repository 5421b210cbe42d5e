//! Pseudo ground truth for unknown objects, built from class-agnostic
//! proposals: NMS, then background proposals only, then the top-k by
//! objectness, then an objectness threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::nms;
use crate::types::{GroundTruthObject, LabelSpace, Proposal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UlpConfig {
    pub nms_threshold: f64,
    pub top_k: usize,
    /// Minimum objectness (exclusive) of a pseudo-label.
    pub delta: f64,
    /// A proposal is background when its IoU with every known object is
    /// below this.
    pub known_overlap_threshold: f64,
}

impl Default for UlpConfig {
    fn default() -> Self {
        Self {
            nms_threshold: 0.3,
            top_k: 5,
            delta: 0.3,
            known_overlap_threshold: 0.5,
        }
    }
}

impl UlpConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("nms_threshold", self.nms_threshold),
            ("delta", self.delta),
            ("known_overlap_threshold", self.known_overlap_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} = {v} must lie in (0, 1)")));
            }
        }
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Indices of the proposals that become pseudo-labels, in descending
/// objectness order.
pub fn select_pseudo_proposals(
    proposals: &[Proposal],
    known_gts: &[GroundTruthObject],
    cfg: &UlpConfig,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    let scored: Vec<_> = proposals.iter().map(|p| (p.bbox, p.objectness)).collect();
    let selected = nms(&scored, cfg.nms_threshold)
        .into_iter()
        .filter(|&i| {
            known_gts
                .iter()
                .all(|g| g.bbox.iou(&proposals[i].bbox) < cfg.known_overlap_threshold)
        })
        .take(cfg.top_k)
        .filter(|&i| proposals[i].objectness > cfg.delta)
        .collect();
    Ok(selected)
}

/// Pseudo ground truth for one image. Every record carries the first unknown
/// slot as a placeholder label; identities among unknowns are left to the
/// classifier.
pub fn select_pseudo_labels(
    proposals: &[Proposal],
    known_gts: &[GroundTruthObject],
    cfg: &UlpConfig,
    space: &LabelSpace,
) -> Result<Vec<GroundTruthObject>> {
    if space.unknown == 0 {
        return Err(Error::InvalidConfig(
            "pseudo-labels need at least one unknown slot".into(),
        ));
    }
    select_pseudo_proposals(proposals, known_gts, cfg)?
        .into_iter()
        .map(|i| {
            let p = &proposals[i];
            GroundTruthObject::pseudo(p.image_id, space.first_unknown(), p.bbox)
        })
        .collect()
}
