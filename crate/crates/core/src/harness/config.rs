use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{AdaptiveThresholds, LossWeights};
use crate::metrics::EvalConfig;
use crate::pseudo_label::UlpConfig;
use crate::refinement::RefineConfig;
use crate::types::LabelSpace;

/// How many clusters the refinement stage fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterCount {
    /// One per unknown slot that received at least one detection.
    NonEmpty,
    /// One per unknown slot of the head.
    Slots,
    Fixed(usize),
}

/// Rows of the matrix the similarity loss is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimEmbedding {
    /// Raw class logits.
    Logits,
    /// Softmax class probabilities.
    Probabilities,
    /// Rectified hidden layer.
    Hidden,
}

/// Everything a simulate → train → refine → eval run depends on. Every field
/// has a default, so a config file only lists overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub known_classes: u32,
    pub unknown_slots: u32,
    /// Distinct unknown classes present in the data.
    pub unknown_classes: u32,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub background_proposals: usize,
    pub feature_noise: f64,
    /// Euclidean distance between any two class prototypes.
    pub prototype_separation: f64,
    pub image_size: f64,
    pub ulp: UlpConfig,
    pub weights: LossWeights,
    pub thresholds: AdaptiveThresholds,
    pub lambda0: f64,
    pub eta: f64,
    pub epochs: usize,
    /// Epoch at which the similarity term switches from ground-truth pair
    /// labels to self-labels.
    pub self_supervised_from: usize,
    pub sim_embedding: SimEmbedding,
    pub head_lr: f64,
    /// Step size of the box-regression layer.
    pub regressor_lr: f64,
    /// IoU with a (pseudo) object for a proposal to be trained as foreground.
    pub foreground_iou: f64,
    pub detection_nms: f64,
    pub refine: RefineConfig,
    pub refine_clusters: ClusterCount,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let epochs = 160;
        Self {
            seed: 7,
            known_classes: 3,
            unknown_slots: 3,
            unknown_classes: 3,
            feature_dim: 8,
            hidden_dim: 32,
            train_scenes: 40,
            test_scenes: 20,
            min_objects: 4,
            max_objects: 6,
            background_proposals: 3,
            feature_noise: 0.1,
            prototype_separation: 1.0,
            image_size: 100.0,
            ulp: UlpConfig::default(),
            weights: LossWeights::default(),
            thresholds: AdaptiveThresholds::default(),
            lambda0: 0.0,
            eta: 0.01,
            epochs,
            self_supervised_from: epochs / 2,
            sim_embedding: SimEmbedding::Logits,
            head_lr: 0.5,
            regressor_lr: 0.01,
            foreground_iou: 0.5,
            detection_nms: 0.5,
            refine: RefineConfig::default(),
            refine_clusters: ClusterCount::Slots,
            eval: EvalConfig::default(),
        }
    }
}

/// Scene layout: objects sit in distinct cells of a `GRID × GRID` grid.
pub(crate) const GRID: usize = 4;

impl RunConfig {
    pub fn label_space(&self) -> LabelSpace {
        LabelSpace::new(self.known_classes, self.unknown_slots)
    }

    /// Classes present in the data, known first.
    pub fn data_classes(&self) -> u32 {
        self.known_classes + self.unknown_classes
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.known_classes == 0 {
            return bad("known_classes must be at least 1".into());
        }
        if self.unknown_classes > self.unknown_slots && self.unknown_slots > 0 {
            return bad(format!(
                "{} unknown classes do not fit in {} unknown slots",
                self.unknown_classes, self.unknown_slots
            ));
        }
        // prototypes are scaled basis vectors, plus one for background
        if self.feature_dim < self.data_classes() as usize + 1 {
            return bad(format!(
                "feature_dim {} cannot hold {} orthogonal prototypes",
                self.feature_dim,
                self.data_classes() + 1
            ));
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be at least 1".into());
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return bad(format!(
                "object count range [{}, {}] is empty",
                self.min_objects, self.max_objects
            ));
        }
        if self.max_objects + self.background_proposals > GRID * GRID {
            return bad(format!(
                "{} objects and {} background proposals exceed the {} grid cells",
                self.max_objects,
                self.background_proposals,
                GRID * GRID
            ));
        }
        if !(self.feature_noise >= 0.0) || !(self.prototype_separation > 0.0) || !(self.image_size > 0.0) {
            return bad("noise must be >= 0, separation and image size > 0".into());
        }
        if self.epochs == 0 || self.self_supervised_from > self.epochs {
            return bad(format!(
                "need epochs >= 1 and self_supervised_from <= epochs, got {} and {}",
                self.epochs, self.self_supervised_from
            ));
        }
        if !(self.regressor_lr >= 0.0) {
            return bad("regressor_lr must be >= 0".into());
        }
        if !(self.head_lr > 0.0) || !(self.eta >= 0.0) || !(self.lambda0 >= 0.0) {
            return bad("head_lr must be > 0, eta and lambda0 >= 0".into());
        }
        for (name, v) in [("foreground_iou", self.foreground_iou), ("detection_nms", self.detection_nms)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} = {v} must lie in (0, 1)"));
            }
        }
        if self.thresholds.is_terminated(self.lambda0) {
            return bad(format!("lambda0 = {} already terminates self-supervision", self.lambda0));
        }
        if let ClusterCount::Fixed(0) = self.refine_clusters {
            return bad("refine_clusters must be at least 1".into());
        }
        self.ulp.validate()?;
        self.weights.validate()?;
        self.refine.validate()?;
        self.eval.validate()
    }

    /// Loads a JSON file of overrides on top of the defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
