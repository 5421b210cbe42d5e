//! Open-world object detection with unknown-class discrimination.
//!
//! The crate covers the algorithmic pipeline end to end on synthetic data:
//!
//! - [`pseudo_label`]: turns class-agnostic proposals into pseudo ground truth
//!   for unknown objects (NMS, background filter, top-k, objectness threshold).
//! - [`losses`]: the unknown-aware classification loss, the pairwise
//!   similarity losses with adaptive thresholds, ℓ1 regression and their
//!   weighted sum, all with analytic gradients.
//! - [`refinement`]: Student-t soft assignment, the sharpened target
//!   distribution and KL-divergence refinement of unknown clusters.
//! - [`metrics`]: mAP, wilderness impact, A-OSE, UC-mAP and UC-Recall.
//! - [`harness`]: synthetic scenes, a small trainable head, the
//!   train/refine pipeline and the file formats used by the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assignment;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod pseudo_label;
pub mod refinement;
pub mod types;

pub use assignment::{hungarian_assign, Assignment};
pub use error::{Error, Result};
pub use types::{
    iou, BBox, ClassLabel, Corners, Detection, GroundTruthObject, LabelSpace, Proposal, TaskConfig,
};
