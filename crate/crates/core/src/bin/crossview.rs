//! Command-line orchestrator: synthesize data, train under the three
//! supervision settings, evaluate retrieval, cluster embedding files, and run
//! the built-in verification batteries.
//!
//! Exit codes: 0 success, 2 usage, 3 data, 4 numeric collapse, 5 I/O.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crossview::checkpoint::{load_checkpoint, save_checkpoint};
use crossview::cluster::{dbscan, read_embeddings, write_embeddings, EmbeddingRecord, View};
use crossview::config::{ExperimentConfig, Setting};
use crossview::data::{load_dataset, synth_generate, write_split_manifest, SplitManifest, SyntheticSpec};
use crossview::eval::{evaluate_retrieval, Direction};
use crossview::manifest::RunManifest;
use crossview::pipeline::{embed_dataset, run_experiment};
use crossview::rng::component_rng;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_COLLAPSE: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser)]
#[command(name = "crossview", version, about = "Limited-supervision cross-view geo-localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cross-view dataset tree.
    Synth(SynthArgs),
    /// Train a model under setting i, ii, or iii.
    Train(TrainArgs),
    /// Evaluate retrieval metrics for a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Cluster an embedding file and write an assignment file.
    Cluster(ClusterArgs),
    /// Export embeddings of a dataset under a checkpoint.
    Export(ExportArgs),
    /// Run the built-in verification batteries.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for the dataset tree.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    locations: usize,
    #[arg(long, default_value_t = 4)]
    drone_views: usize,
    #[arg(long, default_value_t = 12)]
    latent_dim: usize,
    /// Drone-view geometric transform strength in [0,1].
    #[arg(long, default_value_t = 0.35)]
    strength: f64,
    /// Confusion level in [0,1]: latent blending plus appearance noise.
    #[arg(long, default_value_t = 0.0)]
    confusion: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rendered image size (square).
    #[arg(long, default_value_t = 96)]
    size: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key = value config file (defaults apply underneath).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Supervision setting: i, ii, or iii.
    #[arg(long)]
    setting: Option<String>,
    #[arg(long)]
    gt_ratio: Option<f64>,
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint that initializes setting iii.
    #[arg(long)]
    init_checkpoint: Option<PathBuf>,
    #[arg(long)]
    checkpoint_out: Option<PathBuf>,
    /// Where to write the run manifest.
    #[arg(long)]
    manifest_out: Option<PathBuf>,
    /// Where to write the split manifest.
    #[arg(long)]
    split_out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Additional config overrides as key=value (repeatable, highest
    /// precedence).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data_root: PathBuf,
    /// d2s or s2d.
    #[arg(long, default_value = "d2s")]
    direction: String,
    #[arg(long, default_value_t = 100)]
    bins: usize,
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ClusterArgs {
    /// Embedding file in the textual format.
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 4)]
    min_samples: usize,
    /// Restrict to one view: d, s, or all.
    #[arg(long, default_value = "all")]
    view: String,
    /// Assignment output file (one `id label` line per instance).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data_root: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct SelfcheckArgs {
    #[arg(long, default_value_t = 12345)]
    seed: u64,
    /// Print every check line, not only failures and the summary.
    #[arg(long)]
    verbose: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Export(a) => cmd_export(a),
        Command::Selfcheck(a) => cmd_selfcheck(a),
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn cmd_synth(a: SynthArgs) -> ExitCode {
    let spec = SyntheticSpec {
        num_locations: a.locations,
        drone_views_per_location: a.drone_views,
        latent_dim: a.latent_dim,
        view_transform_strength: a.strength,
        confusion_level: a.confusion,
        seed: a.seed,
        image_size: a.size,
    };
    match synth_generate(&spec, &a.out) {
        Ok(()) => {
            println!(
                "generated {} locations x (1 satellite + {} drone views) at {}",
                a.locations,
                a.drone_views,
                a.out.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(EXIT_DATA, e),
    }
}

fn resolve_train_config(a: &TrainArgs) -> Result<ExperimentConfig, (u8, String)> {
    let mut config = ExperimentConfig::default();
    if let Some(path) = &a.config {
        config
            .merge_file(path)
            .map_err(|e| (EXIT_USAGE, e.to_string()))?;
    }
    if let Some(s) = &a.setting {
        let setting = Setting::parse(s).ok_or((EXIT_USAGE, format!("bad setting {s:?}")))?;
        config.setting = setting;
    }
    if let Some(r) = a.gt_ratio {
        config.gt_ratio = r;
    }
    if let Some(p) = &a.data_root {
        config.data_root = Some(p.clone());
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(p) = &a.init_checkpoint {
        config.checkpoint_in = Some(p.clone());
    }
    if let Some(p) = &a.checkpoint_out {
        config.checkpoint_out = Some(p.clone());
    }
    if let Some(t) = a.threads {
        config.threads = t;
    }
    for kv in &a.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or((EXIT_USAGE, format!("--set expects key=value, got {kv:?}")))?;
        config
            .apply_kv(k.trim(), v.trim())
            .map_err(|e| (EXIT_USAGE, e.to_string()))?;
    }
    config.validate().map_err(|e| (EXIT_USAGE, e.to_string()))?;
    if config.data_root.is_none() {
        return Err((EXIT_USAGE, "train requires --data-root (or data_root in the config)".into()));
    }
    Ok(config)
}

fn cmd_train(a: TrainArgs) -> ExitCode {
    let config = match resolve_train_config(&a) {
        Ok(c) => c,
        Err((code, msg)) => return fail(code, msg),
    };
    let started = Instant::now();
    let root = config.data_root.clone().expect("validated above");
    let (records, report) = match load_dataset(&root, config.input_size) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_DATA, e),
    };
    for (loc, why) in &report.rejected {
        eprintln!("rejected location {loc}: {why}");
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if records.is_empty() {
        return fail(EXIT_DATA, "dataset has no usable locations");
    }
    let load_s = started.elapsed().as_secs_f64();

    let init = match &config.checkpoint_in {
        Some(path) if config.setting == Setting::III => match load_checkpoint(path) {
            Ok(m) => Some(m),
            Err(e) => return fail(EXIT_DATA, e),
        },
        _ => None,
    };

    let train_started = Instant::now();
    let outcome = match run_experiment(&config, &records, init) {
        Ok(o) => o,
        Err(e) => return fail(EXIT_DATA, e),
    };
    let train_s = train_started.elapsed().as_secs_f64();

    // training log: one structured line per epoch
    for stats in &outcome.epoch_log {
        println!("{stats}");
    }

    if let Some(path) = &config.checkpoint_out {
        if let Err(e) = save_checkpoint(&outcome.model, path) {
            return fail(EXIT_IO, e);
        }
        println!("checkpoint written to {}", path.display());
    }

    let split_manifest_path = a.split_out.clone();
    if let Some(path) = &split_manifest_path {
        let m = SplitManifest {
            seed: config.seed,
            gt_ratio: config.gt_ratio,
            paired_location_ids: outcome.split.paired_location_ids(),
        };
        if let Err(e) = write_split_manifest(path, &m) {
            return fail(EXIT_IO, e);
        }
    }

    if let Some(path) = &a.manifest_out {
        let mut manifest = RunManifest::new(config.clone());
        manifest.split_manifest = split_manifest_path
            .as_ref()
            .map(|p| p.display().to_string());
        manifest.add_timing("load", load_s);
        manifest.add_timing("train", train_s);
        manifest.add_timing("total", started.elapsed().as_secs_f64());
        if let Err(e) = manifest.write(path) {
            return fail(EXIT_IO, e);
        }
    }

    if outcome.collapsed_every_epoch {
        return fail(
            EXIT_COLLAPSE,
            "clustering collapsed in every transfer epoch; see the log lines above",
        );
    }
    ExitCode::SUCCESS
}

fn cmd_eval(a: EvalArgs) -> ExitCode {
    let Some(direction) = Direction::parse(&a.direction) else {
        return fail(EXIT_USAGE, format!("bad direction {:?}", a.direction));
    };
    let model = match load_checkpoint(&a.checkpoint) {
        Ok(m) => m,
        Err(e) => return fail(EXIT_DATA, e),
    };
    let (records, report) = match load_dataset(&a.data_root, model.config.input_size) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_DATA, e),
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let embedded = match embed_dataset(&model, &records, a.threads) {
        Ok(e) => e,
        Err(e) => return fail(EXIT_DATA, e),
    };
    let (queries, gallery) = match direction {
        Direction::DroneToSatellite => (&embedded.drone, &embedded.satellite),
        Direction::SatelliteToDrone => (&embedded.satellite, &embedded.drone),
    };
    let relevance = embedded.relevance(queries, gallery);
    let mut rng = component_rng(a.seed, "eval-overlap");
    let metrics = match evaluate_retrieval(queries, gallery, &relevance, a.bins, &mut rng) {
        Ok(m) => m,
        Err(e) => return fail(EXIT_DATA, e),
    };
    println!("{metrics}");
    if let Some(path) = &a.report_out {
        if let Err(e) = std::fs::write(path, format!("{metrics}\n")) {
            return fail(EXIT_IO, e);
        }
    }
    ExitCode::SUCCESS
}

fn cmd_cluster(a: ClusterArgs) -> ExitCode {
    let file = match read_embeddings(&a.embeddings) {
        Ok(f) => f,
        Err(e) => return fail(EXIT_DATA, e),
    };
    let view_filter = match a.view.as_str() {
        "all" => None,
        v => match View::parse(v) {
            Some(view) => Some(view),
            None => return fail(EXIT_USAGE, format!("bad view {v:?}")),
        },
    };
    let points: Vec<_> = file
        .records
        .iter()
        .filter(|r| view_filter.is_none_or(|v| r.embedding.view == v))
        .map(|r| r.embedding.clone())
        .collect();
    // A zero radius clusters nothing: report every instance as noise rather
    // than asking the clusterer for an empty neighborhood graph.
    let assignment = if a.eps == 0.0 {
        crossview::cluster::ClusterAssignment {
            labels: vec![-1; points.len()],
            cluster_count: 0,
        }
    } else {
        match dbscan(&points, a.eps, a.min_samples) {
            Ok(x) => x,
            Err(e) => return fail(EXIT_USAGE, e),
        }
    };
    println!(
        "count={} clusters={} noise={}",
        points.len(),
        assignment.cluster_count,
        assignment.noise_count()
    );
    if let Some(path) = &a.out {
        let mut out = String::new();
        for (p, l) in points.iter().zip(assignment.labels.iter()) {
            out.push_str(&format!("{} {}\n", p.id, l));
        }
        if let Err(e) = std::fs::write(path, out) {
            return fail(EXIT_IO, e);
        }
    }
    ExitCode::SUCCESS
}

fn cmd_export(a: ExportArgs) -> ExitCode {
    let model = match load_checkpoint(&a.checkpoint) {
        Ok(m) => m,
        Err(e) => return fail(EXIT_DATA, e),
    };
    let (records, _) = match load_dataset(&a.data_root, model.config.input_size) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_DATA, e),
    };
    let embedded = match embed_dataset(&model, &records, a.threads) {
        Ok(e) => e,
        Err(e) => return fail(EXIT_DATA, e),
    };
    let mut records_out: Vec<EmbeddingRecord> = Vec::new();
    for e in embedded.drone.iter().chain(embedded.satellite.iter()) {
        records_out.push(EmbeddingRecord {
            location: embedded.location_of.get(&e.id).cloned(),
            embedding: e.clone(),
        });
    }
    match write_embeddings(&a.out, &records_out) {
        Ok(()) => {
            println!("wrote {} embeddings to {}", records_out.len(), a.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(EXIT_IO, e),
    }
}

fn cmd_selfcheck(a: SelfcheckArgs) -> ExitCode {
    let started = Instant::now();
    let (results, pass) = crossview::selfcheck::run_all(a.seed);
    let mut failed = 0usize;
    for r in &results {
        if !r.pass {
            failed += 1;
            println!("FAIL {} - {}", r.name, r.detail);
        } else if a.verbose {
            println!("ok   {} - {}", r.name, r.detail);
        }
    }
    println!(
        "selfcheck: {}/{} checks passed in {:.1}s",
        results.len() - failed,
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_DATA)
    }
}
