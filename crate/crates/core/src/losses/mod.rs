//! Training losses with analytic gradients.
//!
//! - [`ucls_loss`]: cross-entropy for known/background rows, max-over-unknown
//!   cross-entropy for pseudo-unknown rows.
//! - [`sim_loss`] / [`self_sim_loss`]: pairwise binary cross-entropy on the
//!   cosine similarity matrix, supervised by ground-truth pair labels and, for
//!   unknown pairs, by adaptive similarity thresholds.
//! - [`l1_reg_loss`]: box-delta regression.
//! - [`total_training_loss`]: the weighted sum used by the trainer.

mod classification;
mod similarity;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use classification::{argmax_unknown, softmax_backward, softmax_rows, ucls_loss, MASK_LOGIT};
pub use similarity::{
    combined_label_matrix, cosine_similarity, embedding_sim_loss, self_label_matrix, self_sim_loss, sim_loss,
    similarity_backward, similarity_matrix, supervised_label_matrix, update_lambda,
    AdaptiveThresholds, EmbeddingSimLoss, PairLabel, PairLabelMatrix, SimLoss, SIMILARITY_EPS,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Array2<f64>,
}

/// Mean absolute deviation and its subgradient (0 where the residual is
/// exactly 0).
pub fn l1_reg_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predicted deltas vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = pred.len() as f64;
    let mut total = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let r = p - t;
            total += r.abs();
            if r > 0.0 {
                1.0 / n
            } else if r < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((total / n, grad))
}

/// Weights of the training objective. `rpn` is carried for completeness;
/// there is no proposal network to train here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub rpn: f64,
    pub cls: f64,
    pub reg: f64,
    pub sim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rpn: 1.0,
            cls: 1.0,
            reg: 1.0,
            sim: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rpn", self.rpn), ("cls", self.cls), ("reg", self.reg), ("sim", self.sim)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("loss weight {name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub ucls: f64,
    pub reg: f64,
    pub sim: f64,
}

pub fn total_training_loss(parts: &LossParts, weights: &LossWeights) -> f64 {
    weights.cls * parts.ucls + weights.reg * parts.reg + weights.sim * parts.sim
}
