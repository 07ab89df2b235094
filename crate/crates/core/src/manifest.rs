//! Run manifest: the resolved config snapshot, split-manifest reference,
//! build identifier, and wall-clock timings — enough to replay a run
//! byte-for-byte on the same build.

use std::fmt;
use std::path::Path;

use crate::config::{ConfigError, ExperimentConfig};

const MAGIC: &str = "crossview-manifest v1";

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub build: String,
    pub split_manifest: Option<String>,
    pub timings_s: Vec<(String, f64)>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn new(config: ExperimentConfig) -> Self {
        let build = format!(
            "{} {}",
            env!("CARGO_PKG_VERSION"),
            option_env!("GIT_COMMIT").unwrap_or("-")
        );
        RunManifest {
            build,
            split_manifest: None,
            timings_s: Vec::new(),
            config,
        }
    }

    pub fn add_timing(&mut self, phase: &str, seconds: f64) {
        self.timings_s.push((phase.to_string(), seconds));
    }

    pub fn write(&self, path: &Path) -> Result<(), std::io::Error> {
        std::fs::write(path, self.to_string())
    }

    pub fn read(path: &Path) -> Result<RunManifest, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let mut build = String::new();
        let mut split_manifest = None;
        let mut timings_s = Vec::new();
        let mut config = ExperimentConfig::default();
        let mut in_config = false;
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                if line.trim() != MAGIC {
                    return Err(ConfigError::Parse {
                        line: 1,
                        msg: format!("bad magic {line:?}"),
                    });
                }
                continue;
            }
            if line == "config begin" {
                in_config = true;
                continue;
            }
            if line == "config end" {
                in_config = false;
                continue;
            }
            if in_config {
                if let Some((k, v)) = line.split_once('=') {
                    config.apply_kv(k.trim(), v.trim())?;
                }
                continue;
            }
            let mut parts = line.splitn(2, ' ');
            match (parts.next(), parts.next()) {
                (Some("build"), Some(v)) => build = v.to_string(),
                (Some("split_manifest"), Some(v)) if v != "-" => {
                    split_manifest = Some(v.to_string())
                }
                (Some("split_manifest"), Some(_)) => {}
                (Some("timing"), Some(v)) => {
                    if let Some((name, secs)) = v.rsplit_once(' ') {
                        if let Ok(s) = secs.parse() {
                            timings_s.push((name.to_string(), s));
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(RunManifest {
            build,
            split_manifest,
            timings_s,
            config,
        })
    }
}

impl fmt::Display for RunManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{MAGIC}")?;
        writeln!(f, "build {}", self.build)?;
        writeln!(
            f,
            "split_manifest {}",
            self.split_manifest.as_deref().unwrap_or("-")
        )?;
        for (name, s) in &self.timings_s {
            writeln!(f, "timing {name} {s}")?;
        }
        writeln!(f, "config begin")?;
        write!(f, "{}", self.config.to_config_string())?;
        writeln!(f, "config end")?;
        Ok(())
    }
}
