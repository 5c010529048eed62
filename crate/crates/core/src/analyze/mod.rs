//! Downstream tasks on latent matrices: density clustering, nearest-neighbor
//! retrieval and anomaly scores, boosted-tree heads and their metrics.

pub mod dbscan;
pub mod export;
pub mod gbdt;
pub mod knn;
pub mod metrics;

pub use dbscan::{dbscan, k_distances, suggest_eps, ClusterLabels, NOISE};
pub use gbdt::{fit_head, predict_head, train_test_split, HeadConfig, HeadKind, HeadModel, Tree};
pub use knn::{anomaly_scores, knn_query, Neighbor, NeighborList, Query};
pub use metrics::{
    classification_metrics, regression_metrics, silhouette_score, threshold_variability, ClassificationMetrics,
    RegressionMetrics, VARIABILITY_THRESHOLD,
};

#[derive(Debug, thiserror::Error)]
pub enum AnalyzeError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown series id {0:?}")]
    UnknownId(String),
    #[error("k = {k} exceeds the {available} available neighbors")]
    KTooLarge { k: usize, available: usize },
    #[error("labels are degenerate: {0}")]
    DegenerateLabels(String),
    #[error("expected {expected} features, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} predictions vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("R² is undefined for constant targets")]
    ConstantTruth,
    #[error("value {0} outside [0, 10]")]
    OutOfRange(f64),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}: {1}")]
    Io(std::path::PathBuf, #[source] std::io::Error),
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
