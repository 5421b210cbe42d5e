//! End-to-end harness on synthetic data: scene generation, a small trainable
//! head, the train → refine pipeline and file formats.

pub mod config;
pub mod dataset;
pub mod head;
pub mod io;
pub mod pipeline;
pub mod train;

pub use config::{ClusterCount, RunConfig, SimEmbedding};
pub use dataset::{generate_dataset, nearest_prototype, prototypes, Annotation, Dataset, Scene, Split};
pub use head::ToyHead;
pub use io::{parse_detections, parse_ground_truth, report_json, DetectionRecord, GroundTruthFile};
pub use pipeline::{refine_pipeline, run_pipeline, PipelineRun, Refined};
pub use train::{detect, train, train_accuracy, ScoredDetection, TrainOutcome, TrainingSet};
