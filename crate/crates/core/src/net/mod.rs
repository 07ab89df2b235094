//! The cross-view invariance sub-network: a small strided backbone, the
//! structural refinement block over flattened sequences, the dual-path
//! spatial attention module, per-branch classifiers, and the multi-term
//! supervised loss.

mod backbone;
mod blocks;
mod classifier;
mod loss;
mod model;

pub use backbone::Backbone;
pub use blocks::{SielModule, SiflBlock};
pub use classifier::ClassifierHead;
pub use loss::{loss_l1, L1Terms, LossWeights};
pub use model::{CdisModel, CdisOutputs, NetConfig, NetError};
