use std::collections::BTreeMap;

pub use crate::config::Setting;
use crate::config::ExperimentConfig;
use crate::cluster::Embedding;
use crate::data::{split_supervision, LocationRecord, SupervisionSplit};
use crate::eval::{rank_gallery, recall_at_k, RelevanceTable};
use crate::net::CdisModel;

use super::epoch::{run_epoch, run_supervised_epoch, EpochSettings, EpochStats, PairedExample};
use super::optim::{AdamW, Optimizer, Sgd};
use super::PipelineError;

/// Matched training pairs of a paired subset: every drone image pairs with a
/// satellite image of its location (cycling when a location has several),
/// labeled by the location's index within the subset.
pub fn paired_examples(paired: &[LocationRecord]) -> Vec<PairedExample> {
    let mut out = Vec::new();
    for (label, rec) in paired.iter().enumerate() {
        let nsat = rec.satellite_images.len();
        if nsat == 0 {
            continue;
        }
        for (i, d) in rec.drone_images.iter().enumerate() {
            out.push(PairedExample {
                drone: d.image.clone(),
                satellite: rec.satellite_images[i % nsat].image.clone(),
                label,
                location_id: rec.location_id.clone(),
            });
        }
    }
    out
}

/// A finished run: the trained model, per-epoch log lines, and whether the
/// transfer phase collapsed in every epoch.
pub struct ExperimentOutcome {
    pub model: CdisModel,
    pub epoch_log: Vec<EpochStats>,
    pub collapsed_every_epoch: bool,
    pub split: SupervisionSplit,
}

/// Run one experiment per the configured setting.
///
/// - Setting I trains the supervised sub-network on the paired subset only
///   (all locations at the default ratio 1.0) and never clusters.
/// - Setting II trains it on the few paired locations, then runs the
///   transfer epochs over the unpaired pool with the supervised term still
///   restricted to the paired subset.
/// - Setting III starts from a foreign-domain checkpoint (`init`) and runs
///   transfer-only epochs; the unpaired pool carries no pair labels by
///   construction.
pub fn run_experiment(
    config: &ExperimentConfig,
    records: &[LocationRecord],
    init: Option<CdisModel>,
) -> Result<ExperimentOutcome, PipelineError> {
    config
        .validate()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    if records.is_empty() {
        return Err(PipelineError::Config("dataset has no locations".into()));
    }
    let split = split_supervision(records, config.gt_ratio, config.seed)?;
    let pairs = paired_examples(&split.paired);
    let settings = EpochSettings::from(config);

    let mut model = match (config.setting, init) {
        (Setting::III, Some(m)) => {
            if m.config.input_size != config.input_size {
                return Err(PipelineError::Checkpoint(format!(
                    "checkpoint input_size {} does not match configured {}",
                    m.config.input_size, config.input_size
                )));
            }
            m
        }
        (Setting::III, None) => {
            return Err(PipelineError::Config(
                "setting iii requires an initial checkpoint".into(),
            ))
        }
        (_, _) => {
            let classes = split.paired.len();
            let num_classes = if classes >= 2 {
                Some(classes)
            } else {
                if !pairs.is_empty() {
                    log::warn!(
                        "only {classes} paired location(s): classifier disabled, CE term inactive"
                    );
                }
                None
            };
            CdisModel::new(config.net_config(), num_classes, config.seed)?
        }
    };

    let mut epoch_log = Vec::new();

    // supervised phase
    if config.setting != Setting::III && !pairs.is_empty() {
        let mut adam = AdamW::new(config.lr_cdis, config.weight_decay, &model.store);
        for e in 0..config.cdis_epochs {
            let stats = run_supervised_epoch(&mut model, &mut adam, &pairs, &settings, e, config.seed)?;
            log::info!("[cdis] {stats}");
            epoch_log.push(stats);
        }
    }

    // transfer phase, active only when unpaired data exists
    let mut collapsed_every_epoch = false;
    if config.setting != Setting::I {
        if split.unpaired.is_empty() {
            log::warn!("no unpaired data: transfer phase skipped");
        } else {
            let mut sgd = Sgd::new(config.lr_cdts, config.sgd_momentum, &model.store);
            if config.freeze_backbone {
                sgd.set_filter(Some(|name| !name.starts_with("backbone.")));
            }
            let mut collapsed = 0usize;
            for e in 0..config.cdts_epochs {
                let stats = run_epoch(
                    &mut model,
                    &mut sgd,
                    &pairs,
                    &split.unpaired,
                    &settings,
                    Some(split.sealed_labels()),
                    e,
                    config.seed,
                )?;
                log::info!("[cdts] {stats}");
                if stats.collapsed_drone && stats.collapsed_satellite {
                    collapsed += 1;
                }
                epoch_log.push(stats);
            }
            collapsed_every_epoch = config.cdts_epochs > 0 && collapsed == config.cdts_epochs;
        }
    }

    Ok(ExperimentOutcome {
        model,
        epoch_log,
        collapsed_every_epoch,
        split,
    })
}

/// Frozen embeddings of a whole labeled dataset, for retrieval evaluation
/// and export.
pub struct EmbeddedDataset {
    pub drone: Vec<Embedding>,
    pub satellite: Vec<Embedding>,
    /// instance id -> location id
    pub location_of: BTreeMap<String, String>,
}

impl EmbeddedDataset {
    /// Relevance across views: items of the other view at the same location.
    pub fn relevance(&self, queries: &[Embedding], gallery: &[Embedding]) -> RelevanceTable {
        let mut table = RelevanceTable::default();
        for q in queries {
            let qloc = &self.location_of[&q.id];
            for g in gallery {
                if &self.location_of[&g.id] == qloc {
                    table.insert(&q.id, &g.id);
                }
            }
        }
        table
    }

    /// Drone-to-satellite R@1 (the headline score of the synthetic
    /// benchmarks).
    pub fn r_at_1_d2s(&self) -> Result<f64, PipelineError> {
        let rel = self.relevance(&self.drone, &self.satellite);
        let ranked = rank_gallery(&self.drone, &self.satellite)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        recall_at_k(&ranked, &rel, 1).map_err(|e| PipelineError::Config(e.to_string()))
    }
}

/// Embed every image of `records` with a frozen model. With `threads > 1`
/// the instances are sharded across threads over parameter replicas; the
/// output order is independent of the thread count.
pub fn embed_dataset(
    model: &CdisModel,
    records: &[LocationRecord],
    threads: usize,
) -> Result<EmbeddedDataset, PipelineError> {
    let mut jobs: Vec<(&str, &crate::data::ImageInstance, crate::cluster::View)> = Vec::new();
    for rec in records {
        for inst in &rec.drone_images {
            jobs.push((&rec.location_id, inst, crate::cluster::View::Drone));
        }
        for inst in &rec.satellite_images {
            jobs.push((&rec.location_id, inst, crate::cluster::View::Satellite));
        }
    }
    let raws: Vec<Vec<f64>> = if threads <= 1 || jobs.len() < 2 {
        jobs.iter()
            .map(|(_, inst, _)| model.raw_descriptor_image(&inst.image))
            .collect::<Result<_, _>>()?
    } else {
        embed_parallel(model, &jobs, threads)?
    };
    // center over the embedded set, then normalize
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

    let mut out = EmbeddedDataset {
        drone: Vec::new(),
        satellite: Vec::new(),
        location_of: BTreeMap::new(),
    };
    for ((loc, inst, view), raw) in jobs.iter().zip(raws) {
        let vec: Vec<f64> = raw.iter().zip(center.iter()).map(|(v, c)| v - c).collect();
        let e = Embedding::normalized(inst.id.clone(), *view, vec)?;
        out.location_of
            .insert(inst.id.clone(), (*loc).to_string());
        match view {
            crate::cluster::View::Drone => out.drone.push(e),
            crate::cluster::View::Satellite => out.satellite.push(e),
        }
    }
    Ok(out)
}

fn embed_parallel(
    model: &CdisModel,
    jobs: &[(&str, &crate::data::ImageInstance, crate::cluster::View)],
    threads: usize,
) -> Result<Vec<Vec<f64>>, PipelineError> {
    // Plain snapshot of the parameters; each thread rebuilds a replica.
    let snapshot: Vec<(String, Vec<f64>)> = model
        .store
        .iter()
        .map(|p| (p.name.clone(), p.value.as_ref().clone()))
        .collect();
    let config = model.config.clone();
    let num_classes = model.num_classes();
    let seed = model.seed;
    let chunk = jobs.len().div_ceil(threads);
    let mut results: Vec<Option<Vec<Vec<f64>>>> = vec![None; threads];
    std::thread::scope(|scope| -> Result<(), PipelineError> {
        let mut handles = Vec::new();
        for (t, (jobs_chunk, slot)) in jobs
            .chunks(chunk.max(1))
            .zip(results.iter_mut())
            .enumerate()
        {
            let snapshot = &snapshot;
            let config = config.clone();
            handles.push((
                t,
                scope.spawn(move || -> Result<Vec<Vec<f64>>, PipelineError> {
                    let mut replica = CdisModel::new(config, num_classes, seed)?;
                    for (name, values) in snapshot {
                        replica.store.set_value(name, values.clone());
                    }
                    jobs_chunk
                        .iter()
                        .map(|(_, inst, _)| Ok(replica.raw_descriptor_image(&inst.image)?))
                        .collect()
                }),
                slot,
            ));
        }
        for (_, handle, slot) in handles {
            *slot = Some(handle.join().expect("embedding thread panicked")?);
        }
        Ok(())
    })?;
    Ok(results.into_iter().flatten().flatten().collect())
}
