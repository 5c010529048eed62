//! Sparse autoencoder trained from scratch: dense and convolutional layers,
//! leaky ReLU, batch normalization, Adam, plateau scheduling and early stopping.

pub mod arch;
pub mod checkpoint;
pub mod layers;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod optim;
pub mod schedule;
pub mod train;

pub use arch::{ArchSpec, LayerSpec, Shape};
pub use checkpoint::{load_checkpoint, read_checkpoint_bytes, save_checkpoint, checkpoint_bytes, Checkpoint, CHECKPOINT_VERSION};
pub use loss::{loss, loss_gradients, LossValue};
pub use model::{init_model, Gradients, LatentVector, Mode, SaeModel};
pub use optim::{adam_step, AdamState};
pub use train::{evaluate, train, train_model, EpochRecord, TensorMatrix, TrainConfig, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum SaeError {
    #[error("shape inference failed: {0}")]
    ShapeInferenceFailure(String),
    #[error("expected {expected} input values, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("loss became non-finite in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u16),
    #[error("checkpoint truncated: needed {needed} bytes, found {found}")]
    TruncatedFile { needed: usize, found: usize },
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
