use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::harness::config::{RunConfig, SimEmbedding};
use crate::harness::dataset::{Dataset, Scene};
use crate::harness::head::ToyHead;
use crate::losses::{
    embedding_sim_loss, l1_reg_loss, softmax_backward, softmax_rows, total_training_loss, ucls_loss,
    update_lambda, LossParts,
};
use crate::metrics::nms;
use crate::pseudo_label::select_pseudo_labels;
use crate::types::{BBox, ClassLabel, Detection, GroundTruthObject, LabelSpace};

/// Regression target `(dx, dy, dw, dh)` taking `proposal` onto `target`.
pub fn box_deltas(proposal: &BBox, target: &BBox) -> [f64; 4] {
    [
        (target.cx() - proposal.cx()) / proposal.w(),
        (target.cy() - proposal.cy()) / proposal.h(),
        (target.w() / proposal.w()).ln(),
        (target.h() / proposal.h()).ln(),
    ]
}

pub fn apply_deltas(proposal: &BBox, d: [f64; 4]) -> Result<BBox> {
    BBox::new(
        proposal.cx() + d[0] * proposal.w(),
        proposal.cy() + d[1] * proposal.h(),
        proposal.w() * d[2].exp(),
        proposal.h() * d[3].exp(),
    )
}

/// Flattened training set: one row per proposal.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub features: Array2<f64>,
    /// Known class, background, or the placeholder unknown of a pseudo-label.
    pub labels: Vec<ClassLabel>,
    /// Regression target for foreground rows.
    pub targets: Vec<Option<[f64; 4]>>,
    pub pseudo_labels: usize,
}

/// Row labels, regression targets and pseudo-label count of one scene.
type SceneLabels = (Vec<ClassLabel>, Vec<Option<[f64; 4]>>, usize);

fn label_scene(
    scene: &Scene,
    cfg: &RunConfig,
    space: &LabelSpace,
) -> Result<SceneLabels> {
    let known = scene.ground_truth(space.known);
    let pseudo = if space.unknown > 0 {
        select_pseudo_labels(&scene.proposals, &known, &cfg.ulp, space)?
    } else {
        Vec::new()
    };
    let mut labels = Vec::with_capacity(scene.proposals.len());
    let mut targets = Vec::with_capacity(scene.proposals.len());
    let best = |objs: &[GroundTruthObject], b: &BBox| -> Option<(GroundTruthObject, f64)> {
        objs.iter()
            .map(|o| (*o, o.bbox.iou(b)))
            .fold(None, |acc: Option<(GroundTruthObject, f64)>, cur| match acc {
                Some(a) if a.1 >= cur.1 => Some(a),
                _ => Some(cur),
            })
    };
    for p in &scene.proposals {
        let k = best(&known, &p.bbox).filter(|(_, iou)| *iou >= cfg.foreground_iou);
        let u = best(&pseudo, &p.bbox).filter(|(_, iou)| *iou >= cfg.foreground_iou);
        let chosen = match (k, u) {
            (Some(k), Some(u)) => Some(if u.1 > k.1 { u } else { k }),
            (k, u) => k.or(u),
        };
        match chosen {
            Some((obj, _)) => {
                labels.push(obj.label);
                targets.push(Some(box_deltas(&p.bbox, &obj.bbox)));
            }
            None => {
                labels.push(ClassLabel::Background);
                targets.push(None);
            }
        }
    }
    Ok((labels, targets, pseudo.len()))
}

impl TrainingSet {
    pub fn build(dataset: &Dataset, cfg: &RunConfig) -> Result<Self> {
        let space = cfg.label_space();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut targets = Vec::new();
        let mut pseudo_labels = 0;
        for scene in &dataset.train {
            let (l, t, n) = label_scene(scene, cfg, &space)?;
            rows.extend(scene.features.iter().cloned());
            labels.extend(l);
            targets.extend(t);
            pseudo_labels += n;
        }
        let d = dataset.feature_dim;
        let features = Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j]);
        Ok(Self {
            features,
            labels,
            targets,
            pseudo_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityPhase {
    Supervised,
    SelfSupervised,
    /// Self-supervision ran until the thresholds met; back to ground-truth
    /// pair labels.
    Terminated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: SimilarityPhase,
    pub lambda: f64,
    pub parts: LossParts,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: ToyHead,
    pub history: Vec<EpochLog>,
    /// Number of λ updates performed before the thresholds met.
    pub lambda_updates: usize,
    /// First epoch trained in the terminated phase, if reached.
    pub terminated_at: Option<usize>,
    pub pseudo_labels: usize,
}

/// Full-batch gradient descent on the weighted training loss.
pub fn train(cfg: &RunConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    dataset.validate()?;
    let space = cfg.label_space();
    if dataset.label_space() != space {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} known classes and {} unknown slots, config {} and {}",
            dataset.known_classes, dataset.unknown_slots, space.known, space.unknown
        )));
    }
    let set = TrainingSet::build(dataset, cfg)?;
    if set.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let x = set.features.view();
    let n = set.len();
    let mut head = ToyHead::new(dataset.feature_dim, cfg.hidden_dim, space.logit_width(), cfg.seed);

    let fg: Vec<usize> = (0..n).filter(|&i| set.targets[i].is_some()).collect();
    let reg_target: Vec<f64> = fg.iter().flat_map(|&i| set.targets[i].unwrap()).collect();

    let mut lambda = cfg.lambda0;
    let mut lambda_updates = 0;
    let mut terminated_at = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let fwd = head.forward(x)?;
        let cls = ucls_loss(fwd.logits.view(), &set.labels, &space)?;

        let mut grad_deltas = Array2::<f64>::zeros((n, 4));
        let pred: Vec<f64> = fg.iter().flat_map(|&i| fwd.deltas.row(i).to_vec()).collect();
        let (reg, reg_grad) = l1_reg_loss(&pred, &reg_target)?;
        for (k, &i) in fg.iter().enumerate() {
            for c in 0..4 {
                grad_deltas[[i, c]] = cfg.weights.reg * reg_grad[4 * k + c];
            }
        }

        let mut grad_logits = cls.grad.mapv(|g| g * cfg.weights.cls);
        let mut grad_hidden = None;
        let phase = if epoch >= cfg.self_supervised_from && space.unknown > 0 {
            if cfg.thresholds.is_terminated(lambda) {
                SimilarityPhase::Terminated
            } else {
                SimilarityPhase::SelfSupervised
            }
        } else {
            SimilarityPhase::Supervised
        };
        let mut sim_value = 0.0;
        if cfg.weights.sim > 0.0 {
            let (e, probs) = match cfg.sim_embedding {
                SimEmbedding::Logits => (fwd.logits.clone(), None),
                SimEmbedding::Probabilities => {
                    let p = softmax_rows(fwd.logits.view());
                    (p.clone(), Some(p))
                }
                SimEmbedding::Hidden => (fwd.hidden.clone(), None),
            };
            let self_supervision = match phase {
                SimilarityPhase::SelfSupervised => Some((lambda, &cfg.thresholds)),
                _ => None,
            };
            let loss = embedding_sim_loss(e.view(), &set.labels, self_supervision)?;
            sim_value = loss.value;
            let grad_e = loss.grad;
            match (cfg.sim_embedding, probs) {
                (SimEmbedding::Logits, _) => grad_logits.scaled_add(cfg.weights.sim, &grad_e),
                (_, Some(p)) => grad_logits.scaled_add(cfg.weights.sim, &softmax_backward(p.view(), grad_e.view())),
                (_, None) => grad_hidden = Some(grad_e.mapv(|g| g * cfg.weights.sim)),
            }
        }

        let parts = LossParts {
            ucls: cls.value,
            reg,
            sim: sim_value,
        };
        let total = total_training_loss(&parts, &cfg.weights);
        if !total.is_finite() {
            return Err(Error::Diverged { step: epoch, loss: total });
        }
        if phase == SimilarityPhase::Terminated && terminated_at.is_none() {
            terminated_at = Some(epoch);
        }
        history.push(EpochLog {
            epoch,
            phase,
            lambda,
            parts,
            total,
        });

        let grads = head.backward_with_hidden(x, &fwd, grad_logits.view(), grad_deltas.view(), grad_hidden.as_ref().map(|g| g.view()));
        head.step_split(&grads, cfg.head_lr, cfg.regressor_lr);
        if !head.is_finite() {
            return Err(Error::Diverged { step: epoch, loss: f64::NAN });
        }
        if phase == SimilarityPhase::SelfSupervised {
            lambda = update_lambda(lambda, cfg.eta, &cfg.thresholds)?;
            lambda_updates += 1;
        }
    }
    log::info!(
        "trained {} epochs on {} proposals ({} pseudo-labels), final loss {:.6}",
        cfg.epochs,
        n,
        set.pseudo_labels,
        history.last().map_or(f64::NAN, |h| h.total)
    );
    Ok(TrainOutcome {
        head,
        history,
        lambda_updates,
        terminated_at,
        pseudo_labels: set.pseudo_labels,
    })
}

/// A detection together with the head output it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDetection {
    pub detection: Detection,
    /// Hidden-layer embedding of the originating proposal.
    pub embedding: Vec<f64>,
}

/// Runs the head on every proposal of `scenes`. Each proposal yields at most
/// one detection, of its most probable non-background class, followed by
/// per-class NMS within each image.
pub fn detect(head: &ToyHead, scenes: &[Scene], space: &LabelSpace, nms_threshold: f64) -> Result<Vec<ScoredDetection>> {
    if head.output_dim() != space.logit_width() {
        return Err(Error::DimensionMismatch(format!(
            "head has {} outputs, label space needs {}",
            head.output_dim(),
            space.logit_width()
        )));
    }
    let mut out = Vec::new();
    for scene in scenes {
        if scene.proposals.is_empty() {
            continue;
        }
        let fwd = head.forward(scene.feature_matrix().view())?;
        let probs = softmax_rows(fwd.logits.view());
        let mut candidates: Vec<ScoredDetection> = Vec::new();
        for (i, p) in scene.proposals.iter().enumerate() {
            let row = probs.row(i);
            let slot = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (j, &v)| if v > b.1 { (j, v) } else { b })
                .0;
            let label = space.label_of_slot(slot)?;
            if label.is_background() {
                continue;
            }
            let d = fwd.deltas.row(i);
            let bbox = apply_deltas(&p.bbox, [d[0], d[1], d[2], d[3]])?;
            let score = row[slot].clamp(0.0, 1.0);
            candidates.push(ScoredDetection {
                detection: Detection::new(scene.image_id, label, bbox, score)?,
                embedding: fwd.hidden.row(i).to_vec(),
            });
        }
        let mut labels: Vec<ClassLabel> = candidates.iter().map(|c| c.detection.label).collect();
        labels.sort();
        labels.dedup();
        for label in labels {
            let idx: Vec<usize> = (0..candidates.len()).filter(|&i| candidates[i].detection.label == label).collect();
            let scored: Vec<(BBox, f64)> = idx.iter().map(|&i| (candidates[i].detection.bbox, candidates[i].detection.score)).collect();
            for k in nms(&scored, nms_threshold) {
                out.push(candidates[idx[k]].clone());
            }
        }
    }
    Ok(out)
}

/// Fraction of training rows whose arg-max class equals their label, over
/// rows with a known or background label.
pub fn train_accuracy(head: &ToyHead, set: &TrainingSet, space: &LabelSpace) -> Result<f64> {
    let fwd = head.forward(set.features.view())?;
    let mut hits = 0;
    let mut total = 0;
    for (i, label) in set.labels.iter().enumerate() {
        if label.is_unknown() {
            continue;
        }
        let row = fwd.logits.slice(s![i, ..]);
        let slot = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (j, &v)| if v > b.1 { (j, v) } else { b })
            .0;
        total += 1;
        if slot == space.slot(*label)? {
            hits += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// Detections only, dropping embeddings.
pub fn plain_detections(dets: &[ScoredDetection]) -> Vec<Detection> {
    dets.iter().map(|d| d.detection).collect()
}
