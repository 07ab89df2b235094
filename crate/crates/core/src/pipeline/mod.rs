//! The cross-domain transfer machinery: momentum cluster memories, dual-path
//! contrastive training with per-epoch re-clustering, optimizers, and the
//! three experiment settings.

mod epoch;
mod experiment;
mod memory;
mod optim;

pub use epoch::{extract_embeddings, run_epoch, run_supervised_epoch, EpochSettings, EpochStats, PairedExample};
pub use experiment::{embed_dataset, paired_examples, run_experiment, EmbeddedDataset, ExperimentOutcome, Setting};
pub use memory::{build_memories, contrastive_loss, momentum_blend, momentum_update, ClusterMemory};
pub use optim::{AdamW, Optimizer, Sgd};

use std::fmt;

use crate::cluster::ClusterError;
use crate::data::DataError;
use crate::net::NetError;
use crate::tensor::TensorError;

#[derive(Debug)]
pub enum PipelineError {
    Tensor(TensorError),
    Net(NetError),
    Cluster(ClusterError),
    Data(DataError),
    /// A view produced zero non-noise clusters this epoch.
    ClusteringCollapse(crate::cluster::View),
    /// Clustering collapsed in every epoch of a run.
    PersistentCollapse,
    InvalidClusterId { id: usize, count: usize },
    Config(String),
    Checkpoint(String),
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Tensor(e) => write!(f, "{e}"),
            Self::Net(e) => write!(f, "{e}"),
            Self::Cluster(e) => write!(f, "{e}"),
            Self::Data(e) => write!(f, "{e}"),
            Self::ClusteringCollapse(v) => {
                write!(f, "clustering collapse: view {v} produced no clusters")
            }
            Self::PersistentCollapse => {
                write!(f, "clustering collapsed in every epoch; nothing was trained")
            }
            Self::InvalidClusterId { id, count } => {
                write!(f, "cluster id {id} out of range for {count} centroids")
            }
            Self::Config(msg) => write!(f, "experiment config: {msg}"),
            Self::Checkpoint(msg) => write!(f, "checkpoint: {msg}"),
        }
    }
}

impl std::error::Error for PipelineError {}

impl From<TensorError> for PipelineError {
    fn from(e: TensorError) -> Self {
        Self::Tensor(e)
    }
}

impl From<NetError> for PipelineError {
    fn from(e: NetError) -> Self {
        Self::Net(e)
    }
}

impl From<ClusterError> for PipelineError {
    fn from(e: ClusterError) -> Self {
        Self::Cluster(e)
    }
}

impl From<DataError> for PipelineError {
    fn from(e: DataError) -> Self {
        Self::Data(e)
    }
}
