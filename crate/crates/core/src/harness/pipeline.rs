use std::collections::BTreeSet;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::harness::config::{ClusterCount, RunConfig};
use crate::harness::dataset::{generate_dataset, Dataset};
use crate::harness::head::ToyHead;
use crate::harness::train::{detect, plain_detections, train, ScoredDetection, TrainOutcome};
use crate::metrics::{evaluate, EvalReport};
use crate::refinement::{refine, RefineOutput};
use crate::types::{ClassLabel, Detection};

#[derive(Debug, Clone)]
pub struct Refined {
    /// Test detections; unknown ones carry their refined cluster as label.
    pub detections: Vec<ScoredDetection>,
    /// `None` when refinement was skipped.
    pub refine: Option<RefineOutput>,
    pub clusters: usize,
}

fn cluster_count(cfg: &RunConfig, unknown: &[&ScoredDetection]) -> usize {
    let k = match cfg.refine_clusters {
        ClusterCount::NonEmpty => unknown
            .iter()
            .map(|d| d.detection.label)
            .collect::<BTreeSet<ClassLabel>>()
            .len(),
        ClusterCount::Slots => cfg.unknown_slots as usize,
        ClusterCount::Fixed(k) => k,
    };
    k.clamp(1, unknown.len())
}

/// Detects on the test split, clusters the embeddings of detections that
/// landed in unknown slots and relabels them `Unknown(C + cluster)`.
/// Refinement is skipped when the training split holds no unlabeled objects.
pub fn refine_pipeline(head: &ToyHead, dataset: &Dataset, cfg: &RunConfig) -> Result<Refined> {
    let space = cfg.label_space();
    let detections = detect(head, &dataset.test, &space, cfg.detection_nms)?;
    if !dataset.train_has_unlabeled_objects() {
        log::info!("training split has no unlabeled objects; refinement skipped");
        return Ok(Refined {
            detections,
            refine: None,
            clusters: 0,
        });
    }
    let unknown_idx: Vec<usize> = (0..detections.len())
        .filter(|&i| detections[i].detection.label.is_unknown())
        .collect();
    if unknown_idx.is_empty() {
        return Err(Error::NoUnknownDetections);
    }
    let unknown: Vec<&ScoredDetection> = unknown_idx.iter().map(|&i| &detections[i]).collect();
    let clusters = cluster_count(cfg, &unknown);
    let dim = unknown[0].embedding.len();
    let e = Array2::from_shape_fn((unknown.len(), dim), |(i, j)| unknown[i].embedding[j]);
    let n = unknown.len();
    let out = refine(e.view(), clusters, &cfg.refine)?;
    let mut detections = detections;
    for (k, &i) in unknown_idx.iter().enumerate() {
        let d = &mut detections[i].detection;
        d.label = ClassLabel::Unknown(space.known + out.assignments[k] as u32);
    }
    log::info!(
        "refined {} unknown detections into {} clusters in {} steps (KL {:.6} -> {:.6})",
        n,
        clusters,
        out.steps,
        out.initial_loss,
        out.final_loss
    );
    Ok(Refined {
        detections,
        refine: Some(out),
        clusters,
    })
}

/// Outcome of simulate → train → detect → refine → evaluate.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub dataset: Dataset,
    pub training: TrainOutcome,
    pub before: EvalReport,
    pub after: EvalReport,
    pub detections_before: Vec<Detection>,
    pub detections_after: Vec<Detection>,
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    let dataset = generate_dataset(cfg, cfg.seed)?;
    let training = train(cfg, &dataset)?;
    let gts = dataset.test_ground_truth();
    let space = cfg.label_space();
    let raw = detect(&training.head, &dataset.test, &space, cfg.detection_nms)?;
    let detections_before = plain_detections(&raw);
    let before = evaluate(&gts, &detections_before, &cfg.eval)?;
    let has_unknown = detections_before.iter().any(|d| d.label.is_unknown());
    let detections_after = if has_unknown {
        plain_detections(&refine_pipeline(&training.head, &dataset, cfg)?.detections)
    } else {
        detections_before.clone()
    };
    let after = evaluate(&gts, &detections_after, &cfg.eval)?;
    Ok(PipelineRun {
        dataset,
        training,
        before,
        after,
        detections_before,
        detections_after,
    })
}
