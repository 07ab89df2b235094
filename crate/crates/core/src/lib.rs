//! Limited-supervision cross-view geo-localization.
//!
//! The crate trains and evaluates a drone/satellite retrieval model in three
//! supervision settings: fully supervised, few-shot paired initialization, and
//! cross-domain transfer with zero pairs. It is organized around:
//!
//! - [`tensor`]: a minimal dense-tensor engine with reverse-mode differentiation
//! - [`net`]: the invariance sub-network (structural + spatial blocks) and its
//!   multi-term supervised loss
//! - [`cluster`]: DBSCAN over unit-norm embeddings for pseudo-labeling
//! - [`pipeline`]: momentum cluster memories, dual-path contrastive training,
//!   and the three experiment settings
//! - [`data`]: dataset ingestion, supervision splits, and a synthetic
//!   cross-view generator
//! - [`eval`]: retrieval metrics (R@K, AP) and the similarity-overlap statistic

pub mod checkpoint;
pub mod cluster;
pub mod config;
pub mod data;
pub mod eval;
pub mod manifest;
pub mod net;
pub mod pipeline;
pub mod rng;
pub mod selfcheck;
pub mod tensor;
