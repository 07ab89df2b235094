use rand_chacha::ChaCha8Rng;

use crate::tensor::{Bound, Graph, ParamId, ParamStore, Tensor};

use super::model::NetError;

struct Branch {
    w1: ParamId,
    b1: ParamId,
    gamma: ParamId,
    beta: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Three independent linear+normalization classifiers, one per feature
/// branch (pooled map, channel-height attention, channel-width attention).
pub struct ClassifierHead {
    branches: Vec<Branch>,
    num_classes: usize,
}

impl ClassifierHead {
    pub fn new(
        store: &mut ParamStore,
        channels: usize,
        num_classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> ClassifierHead {
        Self::with_prefix(store, "classifier", channels, num_classes, rng)
    }

    pub fn with_prefix(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        num_classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> ClassifierHead {
        let branches = (0..3)
            .map(|i| {
                let p = format!("{prefix}.branch{i}");
                Branch {
                    w1: store.add_uniform(&format!("{p}.fc1.weight"), &[channels, channels], channels, rng),
                    b1: store.add_zeros(&format!("{p}.fc1.bias"), &[channels]),
                    gamma: store.add_ones(&format!("{p}.norm.gamma"), &[channels]),
                    beta: store.add_zeros(&format!("{p}.norm.beta"), &[channels]),
                    w2: store.add_uniform(&format!("{p}.fc2.weight"), &[num_classes, channels], channels, rng),
                    b2: store.add_zeros(&format!("{p}.fc2.bias"), &[num_classes]),
                }
            })
            .collect();
        ClassifierHead {
            branches,
            num_classes,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn forward(
        &self,
        g: &Graph,
        bound: &Bound,
        branch: usize,
        feature: &Tensor,
        eps: f64,
    ) -> Result<Tensor, NetError> {
        let b = &self.branches[branch];
        let h = g.linear(feature, bound.t(b.w1), Some(bound.t(b.b1)))?;
        let n = g.layer_norm(&h, bound.t(b.gamma), bound.t(b.beta), eps)?;
        Ok(g.linear(&n, bound.t(b.w2), Some(bound.t(b.b2)))?)
    }
}
