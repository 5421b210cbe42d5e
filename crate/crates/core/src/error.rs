use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid box (cx={cx}, cy={cy}, w={w}, h={h}): width and height must be finite and positive")]
    InvalidBox { cx: f64, cy: f64, w: f64, h: f64 },

    #[error("class id {id} is outside the label space of {known} known classes and {unknown} unknown slots")]
    ClassIdOutOfRange { id: u32, known: u32, unknown: u32 },

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("score {0} is outside [0, 1]")]
    InvalidScore(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("similarity ({row}, {col}) = {value} must lie strictly inside (0, 1)")]
    SimilarityOutOfRange { row: usize, col: usize, value: f64 },

    #[error("embedding row {row} has zero norm")]
    ZeroNormRow { row: usize },

    #[error("self-supervision terminated: TH({lambda}) = {high} <= TL({lambda}) = {low}")]
    SelfSupervisionTerminated { lambda: f64, high: f64, low: f64 },

    #[error("empty batch")]
    EmptyBatch,

    #[error("cluster {cluster} is empty (soft frequency {frequency})")]
    EmptyCluster { cluster: usize, frequency: f64 },

    #[error("distribution entry ({row}, {col}) = {value} is negative or not finite")]
    InvalidDistribution { row: usize, col: usize, value: f64 },

    #[error("need at least {needed} points to seed {needed} clusters, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("UC-mAP undefined for this split: the ground truth contains no unknown classes")]
    NoUnknownGroundTruth,

    #[error("no detections fall into unknown slots; lower the objectness threshold delta to produce more pseudo-labels")]
    NoUnknownDetections,

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("schema error: {0}")]
    Schema(String),
}
