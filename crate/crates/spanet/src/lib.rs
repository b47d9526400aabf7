//! SPA-Net: a two-branch attention regressor that predicts a frame's PQI
//! from its pixels (patch tokens) and its SLIC superpixels (color
//! statistics plus size and position).
//!
//! Everything runs in f64 with hand-written backpropagation so that the
//! gradients can be checked against finite differences.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod preprocess;
pub mod train;

use thiserror::Error;

pub use crate::config::{SpaNetConfig, TrainConfig};
pub use crate::model::{SpaNetInput, SpaNetModel, SuperpixelInput};
pub use crate::train::{train, Sample, TrainReport};

#[derive(Debug, Error)]
pub enum SpaNetError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("superpixel mask has no valid rows")]
    EmptyMask,
    #[error("model has a superpixel branch but the input has no superpixels")]
    MissingSuperpixels,
    #[error("training set is empty")]
    EmptyDataset,
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("unsupported checkpoint version `{0}`")]
    CheckpointVersion(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] pqi_core::Error),
}

impl SpaNetError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SpaNetError::NonFinite(_) | SpaNetError::Diverged { .. }
        )
    }
}

pub type Result<T, E = SpaNetError> = std::result::Result<T, E>;
