//! Experiment configuration: a flat, documented key = value text format plus
//! typed accessors. Precedence is command line > config file > defaults; the
//! resolved snapshot serializes back into the same format, so a run manifest
//! can be replayed byte-for-byte.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::net::{LossWeights, NetConfig};

/// Supervision setting of an experiment run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    /// Fully supervised training on 100% pairs.
    I,
    /// Few-shot paired initialization, then transfer training on all data.
    II,
    /// Transfer-only training from a foreign-domain checkpoint, zero pairs.
    III,
}

impl Setting {
    pub fn parse(s: &str) -> Option<Setting> {
        match s.to_ascii_lowercase().as_str() {
            "i" | "1" => Some(Setting::I),
            "ii" | "2" => Some(Setting::II),
            "iii" | "3" => Some(Setting::III),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Setting::I => "i",
            Setting::II => "ii",
            Setting::III => "iii",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Io(std::io::Error),
    Parse { line: usize, msg: String },
    UnknownKey(String),
    BadValue { key: String, value: String },
    Validation(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "config I/O: {e}"),
            Self::Parse { line, msg } => write!(f, "config line {line}: {msg}"),
            Self::UnknownKey(k) => write!(f, "unknown config key {k:?}"),
            Self::BadValue { key, value } => write!(f, "bad value {value:?} for key {key}"),
            Self::Validation(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<std::io::Error> for ConfigError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

/// Every knob of a run. Defaults mirror the reference training recipe:
/// loss weights (0.6, 0.1, 1.0), clustering radii (0.40, 0.30) with minimum
/// cluster size 4, epochs (1, 30), learning rates (0.001, 0.00025).
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub setting: Setting,
    pub gt_ratio: f64,
    pub lambda_mse: f64,
    pub lambda_ce: f64,
    pub lambda_infonce: f64,
    /// Transfer-phase contrastive temperature.
    pub tau: f64,
    /// Memory momentum factor.
    pub alpha: f64,
    /// Supervised InfoNCE temperature.
    pub infonce_tau: f64,
    pub eps_drone: f64,
    pub eps_satellite: f64,
    pub min_samples: usize,
    pub cdis_epochs: usize,
    pub cdts_epochs: usize,
    pub batch_size: usize,
    pub lr_cdis: f64,
    pub lr_cdts: f64,
    pub weight_decay: f64,
    pub sgd_momentum: f64,
    pub input_size: usize,
    pub stage_channels: [usize; 3],
    pub backbone_gain: f64,
    pub stem_channels: usize,
    pub seed: u64,
    pub threads: usize,
    pub freeze_backbone: bool,
    pub data_root: Option<PathBuf>,
    pub checkpoint_in: Option<PathBuf>,
    pub checkpoint_out: Option<PathBuf>,
    pub report_out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            setting: Setting::I,
            gt_ratio: 1.0,
            lambda_mse: 0.6,
            lambda_ce: 0.1,
            lambda_infonce: 1.0,
            tau: 0.05,
            alpha: 0.1,
            infonce_tau: 0.1,
            eps_drone: 0.40,
            eps_satellite: 0.30,
            min_samples: 4,
            cdis_epochs: 1,
            cdts_epochs: 30,
            batch_size: 16,
            lr_cdis: 0.001,
            lr_cdts: 0.000_25,
            weight_decay: 0.01,
            sgd_momentum: 0.0,
            input_size: 96,
            stage_channels: [12, 24, 32],
            backbone_gain: 2.5,
            stem_channels: 16,
            seed: 0,
            threads: 1,
            freeze_backbone: false,
            data_root: None,
            checkpoint_in: None,
            checkpoint_out: None,
            report_out: None,
        }
    }
}

impl ExperimentConfig {
    /// Defaults overlaid with a config file.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let mut config = ExperimentConfig::default();
        config.merge_file(path)?;
        Ok(config)
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: i + 1,
                msg: format!("expected key = value, got {raw:?}"),
            })?;
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Apply one key/value pair (shared by the file parser and CLI overrides).
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        macro_rules! num {
            () => {
                value.parse().map_err(|_| bad())?
            };
        }
        match key {
            "setting" => self.setting = Setting::parse(value).ok_or_else(bad)?,
            "gt_ratio" => self.gt_ratio = num!(),
            "lambda_mse" => self.lambda_mse = num!(),
            "lambda_ce" => self.lambda_ce = num!(),
            "lambda_infonce" => self.lambda_infonce = num!(),
            "tau" => self.tau = num!(),
            "alpha" => self.alpha = num!(),
            "infonce_tau" => self.infonce_tau = num!(),
            "eps_drone" => self.eps_drone = num!(),
            "eps_satellite" => self.eps_satellite = num!(),
            "min_samples" => self.min_samples = num!(),
            "cdis_epochs" => self.cdis_epochs = num!(),
            "cdts_epochs" => self.cdts_epochs = num!(),
            "batch_size" => self.batch_size = num!(),
            "lr_cdis" => self.lr_cdis = num!(),
            "lr_cdts" => self.lr_cdts = num!(),
            "weight_decay" => self.weight_decay = num!(),
            "sgd_momentum" => self.sgd_momentum = num!(),
            "input_size" => self.input_size = num!(),
            "backbone_gain" => self.backbone_gain = num!(),
            "stem_channels" => self.stem_channels = num!(),
            "stage_channels" => {
                let parts: Vec<usize> = value
                    .split(',')
                    .map(|p| p.trim().parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad())?;
                if parts.len() != 3 {
                    return Err(bad());
                }
                self.stage_channels = [parts[0], parts[1], parts[2]];
            }
            "seed" => self.seed = num!(),
            "threads" => self.threads = num!(),
            "freeze_backbone" => {
                self.freeze_backbone = match value {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => return Err(bad()),
                }
            }
            "data_root" => self.data_root = Some(PathBuf::from(value)),
            "checkpoint_in" => self.checkpoint_in = Some(PathBuf::from(value)),
            "checkpoint_out" => self.checkpoint_out = Some(PathBuf::from(value)),
            "report_out" => self.report_out = Some(PathBuf::from(value)),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Validation(msg.to_string()))
            }
        };
        check(
            (0.0..=1.0).contains(&self.gt_ratio),
            "gt_ratio must be in [0,1]",
        )?;
        check(self.tau > 0.0, "tau must be positive")?;
        check(self.infonce_tau > 0.0, "infonce_tau must be positive")?;
        check(
            (0.0..=1.0).contains(&self.alpha),
            "alpha must be in [0,1]",
        )?;
        check(self.eps_drone > 0.0, "eps_drone must be positive")?;
        check(self.eps_satellite > 0.0, "eps_satellite must be positive")?;
        check(self.min_samples >= 1, "min_samples must be >= 1")?;
        check(self.batch_size >= 1, "batch_size must be >= 1")?;
        check(self.threads >= 1, "threads must be >= 1")?;
        check(
            self.lambda_mse >= 0.0 && self.lambda_ce >= 0.0 && self.lambda_infonce >= 0.0,
            "loss weights must be nonnegative",
        )?;
        check(
            self.setting != Setting::III || self.checkpoint_in.is_some(),
            "setting iii requires checkpoint_in",
        )?;
        check(
            self.setting != Setting::III || self.gt_ratio == 0.0,
            "setting iii runs with gt_ratio 0",
        )?;
        self.net_config()
            .validate()
            .map_err(|e| ConfigError::Validation(e.to_string()))?;
        Ok(())
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            input_size: self.input_size,
            stage_channels: self.stage_channels,
            backbone_gain: self.backbone_gain,
            stem_channels: self.stem_channels,
            ..NetConfig::default()
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            mse: self.lambda_mse,
            ce: self.lambda_ce,
            infonce: self.lambda_infonce,
        }
    }

    /// Resolved snapshot in the config file format. Parsing it back yields an
    /// identical config, which is how manifests support exact replay.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("setting", self.setting.to_string());
        kv("gt_ratio", self.gt_ratio.to_string());
        kv("lambda_mse", self.lambda_mse.to_string());
        kv("lambda_ce", self.lambda_ce.to_string());
        kv("lambda_infonce", self.lambda_infonce.to_string());
        kv("tau", self.tau.to_string());
        kv("alpha", self.alpha.to_string());
        kv("infonce_tau", self.infonce_tau.to_string());
        kv("eps_drone", self.eps_drone.to_string());
        kv("eps_satellite", self.eps_satellite.to_string());
        kv("min_samples", self.min_samples.to_string());
        kv("cdis_epochs", self.cdis_epochs.to_string());
        kv("cdts_epochs", self.cdts_epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr_cdis", self.lr_cdis.to_string());
        kv("lr_cdts", self.lr_cdts.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("sgd_momentum", self.sgd_momentum.to_string());
        kv("input_size", self.input_size.to_string());
        kv("backbone_gain", self.backbone_gain.to_string());
        kv("stem_channels", self.stem_channels.to_string());
        kv(
            "stage_channels",
            format!(
                "{},{},{}",
                self.stage_channels[0], self.stage_channels[1], self.stage_channels[2]
            ),
        );
        kv("seed", self.seed.to_string());
        kv("threads", self.threads.to_string());
        kv("freeze_backbone", self.freeze_backbone.to_string());
        for (k, v) in [
            ("data_root", &self.data_root),
            ("checkpoint_in", &self.checkpoint_in),
            ("checkpoint_out", &self.checkpoint_out),
            ("report_out", &self.report_out),
        ] {
            if let Some(p) = v {
                kv(k, p.display().to_string());
            }
        }
        s
    }
}
