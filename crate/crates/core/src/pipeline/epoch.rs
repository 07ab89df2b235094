use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;

use crate::cluster::{dbscan, purity, ClusterAssignment, Embedding, View};
use crate::config::ExperimentConfig;
use crate::data::{Image, SealedLabels, UnpairedPool};
use crate::net::{loss_l1, CdisModel, CdisOutputs, L1Terms, LossWeights};
use crate::rng::component_rng;
use crate::tensor::{Bound, Graph, Tensor};

use super::memory::{build_memories, contrastive_loss, momentum_update, ClusterMemory};
use super::optim::Optimizer;
use super::PipelineError;

/// Transfer-phase hyperparameters shared by every epoch of a run.
#[derive(Debug, Clone)]
pub struct EpochSettings {
    pub batch_size: usize,
    pub tau: f64,
    pub alpha: f64,
    pub infonce_tau: f64,
    pub eps_drone: f64,
    pub eps_satellite: f64,
    pub min_samples: usize,
    pub loss_weights: LossWeights,
}

impl From<&ExperimentConfig> for EpochSettings {
    fn from(c: &ExperimentConfig) -> Self {
        EpochSettings {
            batch_size: c.batch_size,
            tau: c.tau,
            alpha: c.alpha,
            infonce_tau: c.infonce_tau,
            eps_drone: c.eps_drone,
            eps_satellite: c.eps_satellite,
            min_samples: c.min_samples,
            loss_weights: c.loss_weights(),
        }
    }
}

/// One matched drone/satellite pair with its class label (the location's
/// index within the paired subset).
#[derive(Debug, Clone)]
pub struct PairedExample {
    pub drone: Image,
    pub satellite: Image,
    pub label: usize,
    pub location_id: String,
}

/// Loss readouts of one optimizer step. Inactive terms are `None`.
#[derive(Debug, Clone, Copy)]
pub struct StepLoss {
    pub l1: Option<L1Terms>,
    pub loss_drone: Option<f64>,
    pub loss_satellite: Option<f64>,
    pub total: f64,
}

/// Per-epoch record: cluster structure, loss traces, and purity when a
/// sealed label channel is available.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub drone_clusters: usize,
    pub satellite_clusters: usize,
    pub drone_noise: usize,
    pub satellite_noise: usize,
    pub collapsed_drone: bool,
    pub collapsed_satellite: bool,
    pub steps: Vec<StepLoss>,
    pub purity_drone: Option<f64>,
    pub purity_satellite: Option<f64>,
}

impl EpochStats {
    pub fn mean_total(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.total).sum::<f64>() / self.steps.len() as f64
    }

    pub fn mean_l1(&self) -> Option<f64> {
        let vals: Vec<f64> = self.steps.iter().filter_map(|s| s.l1.map(|t| t.total)).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    fn mean_of(&self, f: impl Fn(&StepLoss) -> Option<f64>) -> Option<f64> {
        let vals: Vec<f64> = self.steps.iter().filter_map(f).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    pub fn mean_loss_drone(&self) -> Option<f64> {
        self.mean_of(|s| s.loss_drone)
    }

    pub fn mean_loss_satellite(&self) -> Option<f64> {
        self.mean_of(|s| s.loss_satellite)
    }
}

fn opt_fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

impl fmt::Display for EpochStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} steps={} K={} L={} noise_d={} noise_s={} l1={} ld={} ls={} total={:.4} purity_d={} purity_s={}",
            self.epoch,
            self.steps.len(),
            self.drone_clusters,
            self.satellite_clusters,
            self.drone_noise,
            self.satellite_noise,
            opt_fmt(self.mean_l1()),
            opt_fmt(self.mean_loss_drone()),
            opt_fmt(self.mean_loss_satellite()),
            self.mean_total(),
            opt_fmt(self.purity_drone),
            opt_fmt(self.purity_satellite),
        )
    }
}

/// Frozen, pool-centered embeddings of the whole unpaired pool, per view,
/// aligned with the pool indices returned alongside. The returned center is
/// the pool mean of raw descriptors; batch queries in the same epoch must be
/// centered with it so they live in the clustered geometry.
pub fn extract_embeddings(
    model: &CdisModel,
    pool: &UnpairedPool,
) -> Result<(Vec<Embedding>, Vec<usize>, Vec<Embedding>, Vec<usize>, Vec<f64>), PipelineError> {
    let mut raws = Vec::with_capacity(pool.images.len());
    for img in &pool.images {
        raws.push(model.raw_descriptor_image(&img.image)?);
    }
    let dim = raws.first().map_or(0, Vec::len);
    let mut center = vec![0.0; dim];
    for r in &raws {
        for (c, v) in center.iter_mut().zip(r.iter()) {
            *c += v;
        }
    }
    if !raws.is_empty() {
        for c in &mut center {
            *c /= raws.len() as f64;
        }
    }
    let mut drone = Vec::new();
    let mut drone_idx = Vec::new();
    let mut sat = Vec::new();
    let mut sat_idx = Vec::new();
    for ((i, img), raw) in pool.images.iter().enumerate().zip(raws) {
        let vec: Vec<f64> = raw.iter().zip(center.iter()).map(|(v, c)| v - c).collect();
        let e = Embedding::normalized(img.id.clone(), img.view, vec)?;
        match img.view {
            View::Drone => {
                drone.push(e);
                drone_idx.push(i);
            }
            View::Satellite => {
                sat.push(e);
                sat_idx.push(i);
            }
        }
    }
    Ok((drone, drone_idx, sat, sat_idx, center))
}

fn purity_of(
    assignment: &ClusterAssignment,
    embeddings: &[Embedding],
    sealed: &SealedLabels,
) -> Option<f64> {
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut locations = Vec::with_capacity(embeddings.len());
    for e in embeddings {
        let loc = sealed.location_of(&e.id)?;
        let next = index.len();
        let id = *index.entry(loc.to_string()).or_insert(next);
        locations.push(id);
    }
    Some(purity(assignment, &locations).value)
}

fn forward_batch(
    model: &CdisModel,
    g: &Graph,
    bound: &Bound,
    images: &[&Image],
) -> Result<Vec<CdisOutputs>, PipelineError> {
    let mut outs = Vec::with_capacity(images.len());
    for img in images {
        let x = g.input(img.data.clone(), &img.shape(), false)?;
        outs.push(model.forward(g, bound, &x)?);
    }
    Ok(outs)
}

/// Chunk `items` for step `step`, without wrapping: sources shorter than the
/// epoch simply stop contributing.
fn chunk<T: Clone>(items: &[T], step: usize, batch: usize) -> &[T] {
    let start = step * batch;
    if start >= items.len() {
        &[]
    } else {
        &items[start..(start + batch).min(items.len())]
    }
}

/// One supervised epoch over the paired subset: mini-batched multi-term loss,
/// one optimizer step per batch.
pub fn run_supervised_epoch(
    model: &mut CdisModel,
    opt: &mut dyn Optimizer,
    pairs: &[PairedExample],
    settings: &EpochSettings,
    epoch: usize,
    master_seed: u64,
) -> Result<EpochStats, PipelineError> {
    if pairs.is_empty() {
        return Err(PipelineError::Config(
            "supervised epoch needs a non-empty paired subset".into(),
        ));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = component_rng(master_seed, &format!("cdis-epoch-{epoch}"));
    order.shuffle(&mut rng);
    let b = settings.batch_size;
    let steps_n = pairs.len().div_ceil(b);
    let mut steps = Vec::with_capacity(steps_n);
    for s in 0..steps_n {
        let idxs = chunk(&order, s, b);
        let g = Graph::new();
        let bound = model.store.bind(&g)?;
        let drone_imgs: Vec<&Image> = idxs.iter().map(|&i| &pairs[i].drone).collect();
        let sat_imgs: Vec<&Image> = idxs.iter().map(|&i| &pairs[i].satellite).collect();
        let labels: Vec<usize> = idxs.iter().map(|&i| pairs[i].label).collect();
        let drone_out = forward_batch(model, &g, &bound, &drone_imgs)?;
        let sat_out = forward_batch(model, &g, &bound, &sat_imgs)?;
        let (loss, terms) = loss_l1(
            &g,
            &settings.loss_weights,
            settings.infonce_tau,
            &drone_out,
            &sat_out,
            &labels,
        )?;
        g.backward(&loss)?;
        model.store.absorb_grads(&g, &bound);
        drop(bound);
        drop(g);
        opt.step(&mut model.store);
        steps.push(StepLoss {
            l1: Some(terms),
            loss_drone: None,
            loss_satellite: None,
            total: terms.total,
        });
    }
    Ok(EpochStats {
        epoch,
        drone_clusters: 0,
        satellite_clusters: 0,
        drone_noise: 0,
        satellite_noise: 0,
        collapsed_drone: false,
        collapsed_satellite: false,
        steps,
        purity_drone: None,
        purity_satellite: None,
    })
}

/// One transfer epoch: re-embed the unpaired pool, cluster each view,
/// rebuild memories, then iterate mini-batches of the combined loss
/// (supervised term over the paired subset when present, plus each view's
/// cluster-contrastive term), updating memories with each query.
///
/// A view whose clustering collapses has its contrastive term skipped for
/// the epoch, flagged in the stats.
pub fn run_epoch(
    model: &mut CdisModel,
    opt: &mut dyn Optimizer,
    pairs: &[PairedExample],
    pool: &UnpairedPool,
    settings: &EpochSettings,
    sealed: Option<&SealedLabels>,
    epoch: usize,
    master_seed: u64,
) -> Result<EpochStats, PipelineError> {
    let (drone_embs, drone_pool_idx, sat_embs, sat_pool_idx, center) = extract_embeddings(model, pool)?;

    let assign_d = dbscan(&drone_embs, settings.eps_drone, settings.min_samples)?;
    let assign_s = dbscan(&sat_embs, settings.eps_satellite, settings.min_samples)?;

    let mut mem_d = match build_memories(&drone_embs, &assign_d, View::Drone, settings.alpha) {
        Ok(m) => Some(m),
        Err(PipelineError::ClusteringCollapse(v)) => {
            log::warn!("epoch {epoch}: clustering collapse on view {v}; term skipped");
            None
        }
        Err(e) => return Err(e),
    };
    let mut mem_s = match build_memories(&sat_embs, &assign_s, View::Satellite, settings.alpha) {
        Ok(m) => Some(m),
        Err(PipelineError::ClusteringCollapse(v)) => {
            log::warn!("epoch {epoch}: clustering collapse on view {v}; term skipped");
            None
        }
        Err(e) => return Err(e),
    };

    let purity_drone = sealed.and_then(|s| purity_of(&assign_d, &drone_embs, s));
    let purity_satellite = sealed.and_then(|s| purity_of(&assign_s, &sat_embs, s));

    // labeled (non-noise) instances per view: (pool index, pseudo-label)
    let labeled = |assign: &ClusterAssignment, pool_idx: &[usize]| -> Vec<(usize, usize)> {
        assign
            .labels
            .iter()
            .zip(pool_idx.iter())
            .filter_map(|(&l, &i)| (l >= 0).then_some((i, l as usize)))
            .collect()
    };
    let mut batch_d = if mem_d.is_some() {
        labeled(&assign_d, &drone_pool_idx)
    } else {
        Vec::new()
    };
    let mut batch_s = if mem_s.is_some() {
        labeled(&assign_s, &sat_pool_idx)
    } else {
        Vec::new()
    };
    let mut pair_order: Vec<usize> = (0..pairs.len()).collect();

    let mut rng = component_rng(master_seed, &format!("cdts-epoch-{epoch}"));
    batch_d.shuffle(&mut rng);
    batch_s.shuffle(&mut rng);
    pair_order.shuffle(&mut rng);

    let b = settings.batch_size;
    let steps_n = [batch_d.len(), batch_s.len(), pair_order.len()]
        .into_iter()
        .max()
        .unwrap()
        .div_ceil(b);
    let mut steps = Vec::with_capacity(steps_n);

    for s in 0..steps_n {
        let g = Graph::new();
        let bound = model.store.bind(&g)?;
        let mut total: Option<Tensor> = None;
        let add_term = |g: &Graph, t: &Tensor, total: &mut Option<Tensor>| {
            *total = Some(match total {
                Some(acc) => g.add(acc, t).expect("scalar add"),
                None => t.clone(),
            });
        };

        // supervised term over the paired subset
        let pair_idxs = chunk(&pair_order, s, b);
        let l1_terms = if pair_idxs.is_empty() {
            None
        } else {
            let drone_imgs: Vec<&Image> = pair_idxs.iter().map(|&i| &pairs[i].drone).collect();
            let sat_imgs: Vec<&Image> = pair_idxs.iter().map(|&i| &pairs[i].satellite).collect();
            let labels: Vec<usize> = pair_idxs.iter().map(|&i| pairs[i].label).collect();
            let drone_out = forward_batch(model, &g, &bound, &drone_imgs)?;
            let sat_out = forward_batch(model, &g, &bound, &sat_imgs)?;
            let (loss, terms) = loss_l1(
                &g,
                &settings.loss_weights,
                settings.infonce_tau,
                &drone_out,
                &sat_out,
                &labels,
            )?;
            add_term(&g, &loss, &mut total);
            Some(terms)
        };

        // per-view contrastive terms; queries also update the memories
        let view_term = |g: &Graph,
                             bound: &Bound,
                             batch: &[(usize, usize)],
                             memory: &mut Option<ClusterMemory>|
         -> Result<Option<(Tensor, Vec<(usize, Vec<f64>)>)>, PipelineError> {
            let Some(mem) = memory.as_ref() else {
                return Ok(None);
            };
            if batch.is_empty() {
                return Ok(None);
            }
            let mut acc: Option<Tensor> = None;
            let mut queries = Vec::with_capacity(batch.len());
            for &(pool_i, label) in batch {
                let img = &pool.images[pool_i];
                let x = g.input(img.image.data.clone(), &img.image.shape(), false)?;
                let out = model.forward(g, bound, &x)?;
                let emb = model.embedding_centered(g, &out, Some(&center))?;
                let loss = contrastive_loss(g, &emb, mem, label, settings.tau)?;
                queries.push((label, g.data(&emb)));
                acc = Some(match acc {
                    Some(a) => g.add(&a, &loss)?,
                    None => loss,
                });
            }
            let mean = g.scale(&acc.unwrap(), 1.0 / batch.len() as f64)?;
            Ok(Some((mean, queries)))
        };

        let d_chunk = chunk(&batch_d, s, b).to_vec();
        let s_chunk = chunk(&batch_s, s, b).to_vec();
        let term_d = view_term(&g, &bound, &d_chunk, &mut mem_d)?;
        let term_s = view_term(&g, &bound, &s_chunk, &mut mem_s)?;
        let loss_drone = term_d.as_ref().map(|(t, _)| g.scalar(t));
        let loss_satellite = term_s.as_ref().map(|(t, _)| g.scalar(t));
        if let Some((t, _)) = &term_d {
            add_term(&g, t, &mut total);
        }
        if let Some((t, _)) = &term_s {
            add_term(&g, t, &mut total);
        }

        let Some(total_t) = total else {
            continue; // nothing active this step
        };
        let total_v = g.scalar(&total_t);
        g.backward(&total_t)?;
        model.store.absorb_grads(&g, &bound);

        // memory updates use the pre-step query values
        if let (Some(mem), Some((_, queries))) = (mem_d.as_mut(), term_d.as_ref()) {
            for (label, q) in queries {
                momentum_update(mem, *label, q)?;
            }
        }
        if let (Some(mem), Some((_, queries))) = (mem_s.as_mut(), term_s.as_ref()) {
            for (label, q) in queries {
                momentum_update(mem, *label, q)?;
            }
        }

        drop(bound);
        drop(g);
        opt.step(&mut model.store);
        steps.push(StepLoss {
            l1: l1_terms,
            loss_drone,
            loss_satellite,
            total: total_v,
        });
    }

    Ok(EpochStats {
        epoch,
        drone_clusters: assign_d.cluster_count,
        satellite_clusters: assign_s.cluster_count,
        drone_noise: assign_d.noise_count(),
        satellite_noise: assign_s.noise_count(),
        collapsed_drone: mem_d.is_none(),
        collapsed_satellite: mem_s.is_none(),
        steps,
        purity_drone,
        purity_satellite,
    })
}
