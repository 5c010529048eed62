//! Dataset-level latent matrices and their 2D t-SNE projection.

pub mod latents;
pub mod tsne;

use std::path::PathBuf;

pub use latents::{extract_latents, read_latents_csv, write_latents_csv, LatentMatrix};
pub use tsne::{
    joint_probabilities, kl_divergence, perplexity_calibration, student_t_affinities, tsne_project,
    read_embedding_csv, write_embedding_csv, Calibration, Embedding2D, TsneConfig,
};

use crate::sae::SaeError;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("latent matrix contains non-finite values")]
    NonFinite,
    #[error("duplicate series id {0:?}")]
    DuplicateId(String),
    #[error("no tensor for series {0:?}")]
    MissingTensor(String),
    #[error("malformed latent file: {0}")]
    Malformed(String),
    #[error("need at least {min} points, found {n}")]
    TooFewPoints { n: usize, min: usize },
    #[error("perplexity must be positive, got {0}")]
    InvalidPerplexity(f64),
    #[error("invalid t-SNE config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] SaeError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
}
