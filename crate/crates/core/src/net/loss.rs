use crate::tensor::{Graph, Tensor};

use super::model::{CdisOutputs, NetError};

/// Coefficients of the three supervised loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub mse: f64,
    pub ce: f64,
    pub infonce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            mse: 0.6,
            ce: 0.1,
            infonce: 1.0,
        }
    }
}

impl LossWeights {
    pub fn combine(&self, mse: f64, ce: f64, infonce: f64) -> f64 {
        self.mse * mse + self.ce * ce + self.infonce * infonce
    }
}

/// Scalar readouts of one supervised-loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct L1Terms {
    pub mse: f64,
    pub ce: f64,
    pub infonce: f64,
    pub total: f64,
}

/// Multi-term supervised loss over a batch of matched drone/satellite pairs:
/// alignment MSE between the structural outputs of each pair, cross-entropy
/// averaged over all classifier branches and both views, and a symmetric
/// in-batch InfoNCE between the unit-normalized pooled features.
pub fn loss_l1(
    g: &Graph,
    weights: &LossWeights,
    temperature: f64,
    drone: &[CdisOutputs],
    satellite: &[CdisOutputs],
    labels: &[usize],
) -> Result<(Tensor, L1Terms), NetError> {
    let b = drone.len();
    if b == 0 || satellite.len() != b || labels.len() != b {
        return Err(NetError::BadConfig(format!(
            "loss needs matched drone/satellite/label batches, got {b}/{}/{}",
            satellite.len(),
            labels.len()
        )));
    }
    if temperature <= 0.0 {
        return Err(NetError::BadConfig(format!(
            "temperature must be positive, got {temperature}"
        )));
    }

    // Alignment MSE between paired structural outputs, averaged over pairs.
    let mut mse_sum = g.mse(&drone[0].sifl_out, &satellite[0].sifl_out)?;
    for i in 1..b {
        let m = g.mse(&drone[i].sifl_out, &satellite[i].sifl_out)?;
        mse_sum = g.add(&mse_sum, &m)?;
    }
    let mse = g.scale(&mse_sum, 1.0 / b as f64)?;

    // Cross-entropy per classifier branch, per view, averaged.
    let mut ce_terms: Vec<Tensor> = Vec::new();
    for view in [drone, satellite] {
        if view.iter().all(|o| o.class_logits.is_some()) {
            for branch in 0..3 {
                let rows: Vec<&Tensor> = view
                    .iter()
                    .map(|o| &o.class_logits.as_ref().unwrap()[branch])
                    .collect();
                let logits = g.stack_rows(&rows)?;
                ce_terms.push(g.cross_entropy(&logits, labels)?);
            }
        }
    }
    let ce = match ce_terms.len() {
        0 => g.scalar_const(0.0),
        n => {
            let mut acc = ce_terms[0].clone();
            for t in &ce_terms[1..] {
                acc = g.add(&acc, t)?;
            }
            g.scale(&acc, 1.0 / n as f64)?
        }
    };

    // Symmetric in-batch InfoNCE over unit-normalized pooled features.
    let d_rows: Vec<&Tensor> = drone.iter().map(|o| &o.pooled).collect();
    let s_rows: Vec<&Tensor> = satellite.iter().map(|o| &o.pooled).collect();
    let ed = g.l2_normalize(&g.stack_rows(&d_rows)?, 1e-12)?;
    let es = g.l2_normalize(&g.stack_rows(&s_rows)?, 1e-12)?;
    let sim = g.scale(&g.linear(&ed, &es, None)?, 1.0 / temperature)?;
    let diag: Vec<usize> = (0..b).collect();
    let nce_rows = g.cross_entropy(&sim, &diag)?;
    let nce_cols = g.cross_entropy(&g.transpose(&sim)?, &diag)?;
    let infonce = g.scale(&g.add(&nce_rows, &nce_cols)?, 0.5)?;

    let total = g.add(
        &g.add(&g.scale(&mse, weights.mse)?, &g.scale(&ce, weights.ce)?)?,
        &g.scale(&infonce, weights.infonce)?,
    )?;
    let terms = L1Terms {
        mse: g.scalar(&mse),
        ce: g.scalar(&ce),
        infonce: g.scalar(&infonce),
        total: g.scalar(&total),
    };
    Ok((total, terms))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_sum_is_analytic() {
        let w = LossWeights::default();
        assert!((w.combine(2.0, 1.0, 0.5) - 1.8).abs() < 1e-12);
    }
}
