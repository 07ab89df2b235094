//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! A [`Graph`] records primitive applications on a linear tape; [`Tensor`]
//! handles index into it. Calling [`Graph::backward`] on a scalar loss walks
//! the tape once in reverse and populates gradients for every tracked
//! ancestor. Double precision throughout; single-threaded per graph.

mod check;
mod graph;
mod param;

pub use check::{finite_diff_check, finite_diff_scalar, FdReport};
pub use graph::{Graph, NodeInfo, PoolMode, Tensor, TensorError};
pub use param::{Bound, Param, ParamId, ParamStore};
