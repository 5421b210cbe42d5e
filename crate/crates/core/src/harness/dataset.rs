//! Synthetic scenes standing in for detector outputs: every object has a box
//! on a coarse grid and a feature vector drawn around its class prototype;
//! proposals are exact, jittered and background boxes with objectness that
//! tracks overlap.

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::{RunConfig, GRID};
use crate::types::{BBox, ClassLabel, GroundTruthObject, LabelSpace, Proposal};

/// Object record as stored in files: flat class id and center-format box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: u64,
    pub class_id: u32,
    pub bbox: BBox,
}

impl Annotation {
    /// Ids below `known` are known classes, the rest unknown.
    pub fn to_ground_truth(&self, known: u32) -> GroundTruthObject {
        let label = if self.class_id < known {
            ClassLabel::Known(self.class_id)
        } else {
            ClassLabel::Unknown(self.class_id)
        };
        GroundTruthObject {
            image_id: self.image_id,
            label,
            bbox: self.bbox,
            is_pseudo: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// Only known objects are annotated.
    Train,
    /// Every object is annotated.
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub image_id: u64,
    pub split: Split,
    pub proposals: Vec<Proposal>,
    /// One feature vector per proposal.
    pub features: Vec<Vec<f64>>,
    /// All objects with their true classes.
    pub objects: Vec<Annotation>,
}

impl Scene {
    /// Ground truth visible to the learner (train) or evaluator (test).
    pub fn ground_truth(&self, known: u32) -> Vec<GroundTruthObject> {
        self.objects
            .iter()
            .filter(|o| self.split == Split::Test || o.class_id < known)
            .map(|o| o.to_ground_truth(known))
            .collect()
    }

    pub fn feature_matrix(&self) -> Array2<f64> {
        let d = self.features.first().map_or(0, Vec::len);
        Array2::from_shape_fn((self.features.len(), d), |(i, j)| self.features[i][j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub known_classes: u32,
    pub unknown_slots: u32,
    pub unknown_classes: u32,
    pub feature_dim: usize,
    /// Row `k` is the prototype of class `k`; the last row is background.
    pub prototypes: Vec<Vec<f64>>,
    pub train: Vec<Scene>,
    pub test: Vec<Scene>,
}

impl Dataset {
    pub fn label_space(&self) -> LabelSpace {
        LabelSpace::new(self.known_classes, self.unknown_slots)
    }

    /// Label space wide enough for every class that occurs in the data.
    pub fn eval_label_space(&self) -> LabelSpace {
        LabelSpace::new(self.known_classes, self.unknown_slots.max(self.unknown_classes))
    }

    pub fn test_ground_truth(&self) -> Vec<GroundTruthObject> {
        self.test.iter().flat_map(|s| s.ground_truth(self.known_classes)).collect()
    }

    pub fn test_annotations(&self) -> Vec<Annotation> {
        self.test.iter().flat_map(|s| s.objects.iter().copied()).collect()
    }

    /// Whether training images contain objects of classes that are not
    /// annotated.
    pub fn train_has_unlabeled_objects(&self) -> bool {
        self.train
            .iter()
            .any(|s| s.objects.iter().any(|o| o.class_id >= self.known_classes))
    }

    pub fn validate(&self) -> Result<()> {
        for scene in self.train.iter().chain(&self.test) {
            if scene.features.len() != scene.proposals.len() {
                return Err(Error::DimensionMismatch(format!(
                    "scene {} has {} proposals but {} feature vectors",
                    scene.image_id,
                    scene.proposals.len(),
                    scene.features.len()
                )));
            }
            if let Some(f) = scene.features.iter().find(|f| f.len() != self.feature_dim) {
                return Err(Error::DimensionMismatch(format!(
                    "scene {} has a feature of length {} (expected {})",
                    scene.image_id,
                    f.len(),
                    self.feature_dim
                )));
            }
        }
        Ok(())
    }
}

/// Class prototypes: scaled basis vectors at pairwise distance `separation`;
/// the background prototype is the next basis vector.
pub fn prototypes(cfg: &RunConfig) -> Vec<Vec<f64>> {
    let scale = cfg.prototype_separation / std::f64::consts::SQRT_2;
    (0..=cfg.data_classes() as usize)
        .map(|k| {
            let mut v = vec![0.0; cfg.feature_dim];
            v[k] = scale;
            v
        })
        .collect()
}

fn noisy(proto: &[f64], noise: Option<&Normal<f64>>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    proto
        .iter()
        .map(|&p| p + noise.map_or(0.0, |n| n.sample(rng)))
        .collect()
}

fn objectness_for(overlap: f64, rng: &mut ChaCha8Rng) -> f64 {
    (0.05 + 0.9 * overlap + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0)
}

fn generate_scene(cfg: &RunConfig, protos: &[Vec<f64>], seed: u64, image_id: u64, split: Split) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(image_id);
    let noise = (cfg.feature_noise > 0.0)
        .then(|| Normal::new(0.0, cfg.feature_noise).expect("positive std"));
    let cell = cfg.image_size / GRID as f64;

    let mut cells: Vec<usize> = (0..GRID * GRID).collect();
    for i in (1..cells.len()).rev() {
        cells.swap(i, rng.random_range(0..=i));
    }
    let n_objects = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let cell_box = |c: usize, rng: &mut ChaCha8Rng| -> Result<BBox> {
        let (gx, gy) = ((c % GRID) as f64, (c / GRID) as f64);
        BBox::new(
            (gx + 0.5) * cell + rng.random_range(-0.1..0.1) * cell,
            (gy + 0.5) * cell + rng.random_range(-0.1..0.1) * cell,
            rng.random_range(0.4..0.7) * cell,
            rng.random_range(0.4..0.7) * cell,
        )
    };

    let mut objects = Vec::with_capacity(n_objects);
    let mut proposals = Vec::new();
    let mut features = Vec::new();
    let background = protos.last().expect("background prototype");
    for &c in &cells[..n_objects] {
        let class_id = rng.random_range(0..cfg.data_classes());
        let bbox = cell_box(c, &mut rng)?;
        objects.push(Annotation { image_id, class_id, bbox });
        let proto = &protos[class_id as usize];

        proposals.push(Proposal::new(image_id, bbox, objectness_for(1.0, &mut rng))?);
        features.push(noisy(proto, noise.as_ref(), &mut rng));
        for _ in 0..2 {
            let jittered = BBox::new(
                bbox.cx() + rng.random_range(-0.12..0.12) * bbox.w(),
                bbox.cy() + rng.random_range(-0.12..0.12) * bbox.h(),
                bbox.w() * rng.random_range(0.85..1.15),
                bbox.h() * rng.random_range(0.85..1.15),
            )?;
            let overlap = jittered.iou(&bbox);
            proposals.push(Proposal::new(image_id, jittered, objectness_for(overlap, &mut rng))?);
            features.push(noisy(proto, noise.as_ref(), &mut rng));
        }
    }
    for &c in &cells[n_objects..n_objects + cfg.background_proposals] {
        let bbox = cell_box(c, &mut rng)?;
        proposals.push(Proposal::new(image_id, bbox, objectness_for(0.0, &mut rng))?);
        features.push(noisy(background, noise.as_ref(), &mut rng));
    }
    Ok(Scene {
        image_id,
        split,
        proposals,
        features,
        objects,
    })
}

/// Train and test scenes for `cfg`, deterministic in `seed`. Test image ids
/// follow the train ids.
pub fn generate_dataset(cfg: &RunConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    if cfg.unknown_classes < 2 {
        return Err(Error::InvalidConfig(
            "the data needs at least two unknown classes".into(),
        ));
    }
    let protos = prototypes(cfg);
    let n_train = cfg.train_scenes as u64;
    let train = (0..n_train)
        .into_par_iter()
        .map(|id| generate_scene(cfg, &protos, seed, id, Split::Train))
        .collect::<Result<Vec<_>>>()?;
    let test = (n_train..n_train + cfg.test_scenes as u64)
        .into_par_iter()
        .map(|id| generate_scene(cfg, &protos, seed, id, Split::Test))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        known_classes: cfg.known_classes,
        unknown_slots: cfg.unknown_slots,
        unknown_classes: cfg.unknown_classes,
        feature_dim: cfg.feature_dim,
        prototypes: protos,
        train,
        test,
    })
}

/// Index of the prototype nearest to `feature`.
pub fn nearest_prototype(feature: ArrayView1<'_, f64>, protos: &[Vec<f64>]) -> usize {
    protos
        .iter()
        .enumerate()
        .map(|(k, p)| (k, p.iter().zip(feature.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()))
        .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let cfg = RunConfig::default();
        let a = generate_dataset(&cfg, 3).unwrap();
        let b = generate_dataset(&cfg, 3).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_ne!(a, generate_dataset(&cfg, 4).unwrap());
        a.validate().unwrap();
    }

    #[test]
    fn zero_noise_features_are_prototypes() {
        let cfg = RunConfig { feature_noise: 0.0, ..Default::default() };
        let ds = generate_dataset(&cfg, 1).unwrap();
        for scene in &ds.test {
            // three proposals per object in object order, then background
            for (i, f) in scene.features.iter().enumerate() {
                let expected = match scene.objects.get(i / 3) {
                    Some(o) => &ds.prototypes[o.class_id as usize],
                    None => ds.prototypes.last().unwrap(),
                };
                assert_eq!(f, expected);
            }
        }
    }

    #[test]
    fn prototypes_are_unit_separated() {
        let p = prototypes(&RunConfig::default());
        for a in 0..p.len() {
            for b in 0..a {
                let d: f64 = p[a].iter().zip(&p[b]).map(|(x, y)| (x - y) * (x - y)).sum();
                assert!((d.sqrt() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn train_split_hides_unknowns() {
        let cfg = RunConfig::default();
        let ds = generate_dataset(&cfg, 2).unwrap();
        assert!(ds.train_has_unlabeled_objects());
        for s in &ds.train {
            assert!(s.ground_truth(cfg.known_classes).iter().all(|g| g.label.is_known()));
        }
        let test_gt = ds.test_ground_truth();
        assert!(test_gt.iter().any(|g| g.label.is_unknown()));
        assert!(test_gt.iter().all(|g| g.label.id().unwrap() < cfg.data_classes()));
    }

    #[test]
    fn rejects_bad_configs() {
        let cfg = RunConfig { unknown_classes: 1, unknown_slots: 3, ..Default::default() };
        assert!(generate_dataset(&cfg, 0).is_err());
        let cfg = RunConfig { feature_dim: 4, ..Default::default() };
        assert!(generate_dataset(&cfg, 0).is_err());
    }
}
