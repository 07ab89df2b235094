use crate::cluster::{l2, ClusterAssignment, Embedding, View};
use crate::tensor::{Graph, Tensor};

use super::PipelineError;

/// Per-view set of cluster centroids with momentum state. Centroids stay
/// unit-norm after construction and after every update.
#[derive(Debug, Clone)]
pub struct ClusterMemory {
    pub view: View,
    pub centroids: Vec<Vec<f64>>,
    /// Momentum factor: weight of the old centroid in an update.
    pub momentum: f64,
    /// Update counter.
    pub iteration: u64,
}

impl ClusterMemory {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }
}

/// Initialize one view's memory: each centroid is the mean of its cluster's
/// member vectors, unit-normalized. Noise instances are excluded. Zero
/// non-noise clusters is a clustering collapse.
pub fn build_memories(
    embeddings: &[Embedding],
    assignment: &ClusterAssignment,
    view: View,
    momentum: f64,
) -> Result<ClusterMemory, PipelineError> {
    assert_eq!(embeddings.len(), assignment.labels.len());
    if assignment.cluster_count == 0 {
        return Err(PipelineError::ClusteringCollapse(view));
    }
    let dim = embeddings.first().map_or(0, Embedding::dim);
    let mut centroids = vec![vec![0.0; dim]; assignment.cluster_count];
    let mut counts = vec![0usize; assignment.cluster_count];
    for (e, &label) in embeddings.iter().zip(assignment.labels.iter()) {
        if label < 0 {
            continue;
        }
        let c = &mut centroids[label as usize];
        for (ci, vi) in c.iter_mut().zip(e.vector.iter()) {
            *ci += vi;
        }
        counts[label as usize] += 1;
    }
    for (c, &n) in centroids.iter_mut().zip(counts.iter()) {
        debug_assert!(n > 0, "every cluster has at least one member");
        for v in c.iter_mut() {
            *v /= n as f64;
        }
        normalize(c);
    }
    Ok(ClusterMemory {
        view,
        centroids,
        momentum,
        iteration: 0,
    })
}

fn normalize(v: &mut [f64]) {
    let n = l2(v);
    if n > 1e-12 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

/// Momentum update of one centroid toward a query:
/// `c <- momentum * c + (1 - momentum) * q`, then unit-normalized.
pub fn momentum_update(
    memory: &mut ClusterMemory,
    cluster_id: usize,
    query: &[f64],
) -> Result<(), PipelineError> {
    if cluster_id >= memory.centroids.len() {
        return Err(PipelineError::InvalidClusterId {
            id: cluster_id,
            count: memory.centroids.len(),
        });
    }
    let a = memory.momentum;
    let c = &mut memory.centroids[cluster_id];
    for (ci, qi) in c.iter_mut().zip(query.iter()) {
        *ci = a * *ci + (1.0 - a) * qi;
    }
    normalize(c);
    memory.iteration += 1;
    Ok(())
}

/// Pre-normalization momentum arithmetic, exposed for algebra checks.
pub fn momentum_blend(momentum: f64, centroid: &[f64], query: &[f64]) -> Vec<f64> {
    centroid
        .iter()
        .zip(query.iter())
        .map(|(c, q)| momentum * c + (1.0 - momentum) * q)
        .collect()
}

/// Cluster-contrastive loss of one query against a memory:
/// `-log( exp(q . c_pos / t) / sum_k exp(q . c_k / t) )`.
///
/// The memory enters the graph as a constant, so the gradient flows only to
/// the query; centroids change exclusively through [`momentum_update`].
pub fn contrastive_loss(
    g: &Graph,
    query: &Tensor,
    memory: &ClusterMemory,
    positive_id: usize,
    temperature: f64,
) -> Result<Tensor, PipelineError> {
    if memory.is_empty() {
        return Err(PipelineError::Cluster(crate::cluster::ClusterError::EmptyMemory));
    }
    if positive_id >= memory.len() {
        return Err(PipelineError::InvalidClusterId {
            id: positive_id,
            count: memory.len(),
        });
    }
    if temperature <= 0.0 {
        return Err(PipelineError::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let k = memory.len();
    let dim = memory.dim();
    let flat: Vec<f64> = memory.centroids.iter().flatten().copied().collect();
    let centroids = g.constant(flat, &[k, dim])?;
    let logits = g.scale(&g.linear(query, &centroids, None)?, 1.0 / temperature)?;
    Ok(g.cross_entropy(&logits, &[positive_id])?)
}
