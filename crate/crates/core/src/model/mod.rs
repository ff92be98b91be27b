//! The expression-recognition network, its trainer, and checkpoints.

mod checkpoint;
mod config;
mod network;
mod train;

pub use checkpoint::{
    from_bytes, load_checkpoint, load_checkpoint_for, network_hash, save_checkpoint, to_bytes,
    FORMAT_VERSION,
};
pub use config::{InitMode, ModelConfig, RunConfig, TrainConfig};
pub use network::{
    Classifier, ClassifierTrace, ConvStage, ForwardTrace, Gradients, Network, StageTrace,
};
pub use train::{
    accuracy, metrics_csv, train, write_metrics, EpochMetrics, LabelledImage, StopReason,
    TrainReport, METRICS_HEADER,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::DataError;
use crate::layers::LayerError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input shape {found:?} does not match network input {expected:?}")]
    InputShape {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("sample {id}: label {label} outside 0..{classes}")]
    Label {
        id: usize,
        label: usize,
        classes: usize,
    },
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
}

impl ModelError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
