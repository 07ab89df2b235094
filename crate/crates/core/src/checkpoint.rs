//! Versioned textual checkpoint: every named parameter tensor with its shape,
//! plus the seed and architecture metadata needed to rebuild the model.
//! Floats use shortest round-trip formatting, so save/load is bit-exact.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::net::{CdisModel, NetConfig};

const MAGIC: &str = "crossview-checkpoint v1";

#[derive(Debug)]
pub enum CheckpointError {
    Io(std::io::Error),
    Parse { line: usize, msg: String },
    Mismatch(String),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "checkpoint I/O: {e}"),
            Self::Parse { line, msg } => write!(f, "checkpoint line {line}: {msg}"),
            Self::Mismatch(msg) => write!(f, "checkpoint mismatch: {msg}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

pub fn save_checkpoint(model: &CdisModel, path: &Path) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "seed {}", model.seed)?;
    writeln!(w, "input_size {}", model.config.input_size)?;
    writeln!(
        w,
        "stage_channels {},{},{}",
        model.config.stage_channels[0],
        model.config.stage_channels[1],
        model.config.stage_channels[2]
    )?;
    match model.num_classes() {
        Some(k) => writeln!(w, "num_classes {k}")?,
        None => writeln!(w, "num_classes -")?,
    }
    writeln!(w, "params {}", model.store.len())?;
    for p in model.store.iter() {
        write!(w, "{} {}", p.name, p.shape.len())?;
        for d in &p.shape {
            write!(w, " {d}")?;
        }
        write!(w, " {}", p.numel())?;
        for v in p.value.iter() {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Rebuild a model from a checkpoint. The architecture metadata in the
/// header reconstructs the parameter set; every stored tensor must then
/// match it by name and shape.
pub fn load_checkpoint(path: &Path) -> Result<CdisModel, CheckpointError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    for l in reader.lines() {
        lines.push(l?);
    }
    let perr = |line: usize, msg: String| CheckpointError::Parse { line, msg };
    let get = |i: usize| -> Result<&str, CheckpointError> {
        lines
            .get(i)
            .map(String::as_str)
            .ok_or_else(|| perr(i + 1, "unexpected end of file".into()))
    };

    if get(0)?.trim() != MAGIC {
        return Err(perr(1, format!("bad magic {:?}", get(0)?)));
    }
    let header_value = |i: usize, key: &str| -> Result<String, CheckpointError> {
        let line = get(i)?;
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(k), Some(v), None) if k == key => Ok(v.to_string()),
            _ => Err(perr(i + 1, format!("expected `{key} <value>`, got {line:?}"))),
        }
    };
    let seed: u64 = header_value(1, "seed")?
        .parse()
        .map_err(|_| perr(2, "bad seed".into()))?;
    let input_size: usize = header_value(2, "input_size")?
        .parse()
        .map_err(|_| perr(3, "bad input_size".into()))?;
    let channels_raw = header_value(3, "stage_channels")?;
    let channels: Vec<usize> = channels_raw
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| perr(4, "bad stage_channels".into()))?;
    if channels.len() != 3 {
        return Err(perr(4, "stage_channels needs 3 entries".into()));
    }
    let classes_raw = header_value(4, "num_classes")?;
    let num_classes = if classes_raw == "-" {
        None
    } else {
        Some(
            classes_raw
                .parse::<usize>()
                .map_err(|_| perr(5, "bad num_classes".into()))?,
        )
    };
    let count: usize = header_value(5, "params")?
        .parse()
        .map_err(|_| perr(6, "bad params count".into()))?;

    let config = NetConfig {
        input_size,
        stage_channels: [channels[0], channels[1], channels[2]],
        ..NetConfig::default()
    };
    let mut model = CdisModel::new(config, num_classes, seed)
        .map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
    if count != model.store.len() {
        return Err(CheckpointError::Mismatch(format!(
            "checkpoint stores {count} tensors, model has {}",
            model.store.len()
        )));
    }

    for row in 0..count {
        let line_no = 7 + row;
        let line = get(6 + row)?;
        let mut tokens = line.split_whitespace();
        let name = tokens
            .next()
            .ok_or_else(|| perr(line_no, "missing name".into()))?
            .to_string();
        let rank: usize = tokens
            .next()
            .ok_or_else(|| perr(line_no, "missing rank".into()))?
            .parse()
            .map_err(|_| perr(line_no, "bad rank".into()))?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(
                tokens
                    .next()
                    .ok_or_else(|| perr(line_no, "missing extent".into()))?
                    .parse::<usize>()
                    .map_err(|_| perr(line_no, "bad extent".into()))?,
            );
        }
        let numel: usize = tokens
            .next()
            .ok_or_else(|| perr(line_no, "missing element count".into()))?
            .parse()
            .map_err(|_| perr(line_no, "bad element count".into()))?;
        if numel != shape.iter().product::<usize>() {
            return Err(perr(line_no, "element count does not match shape".into()));
        }
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            values.push(
                tokens
                    .next()
                    .ok_or_else(|| perr(line_no, "missing value".into()))?
                    .parse::<f64>()
                    .map_err(|_| perr(line_no, "bad float".into()))?,
            );
        }
        if tokens.next().is_some() {
            return Err(perr(line_no, "trailing tokens".into()));
        }
        let param = model
            .store
            .by_name(&name)
            .ok_or_else(|| CheckpointError::Mismatch(format!("unknown parameter {name}")))?;
        if param.shape != shape {
            return Err(CheckpointError::Mismatch(format!(
                "parameter {name}: checkpoint shape {shape:?}, model shape {:?}",
                param.shape
            )));
        }
        model.store.set_value(&name, values);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Image;
    use crate::rng::component_rng;
    use rand::Rng;

    fn tiny_model(classes: Option<usize>) -> CdisModel {
        let config = NetConfig {
            input_size: 16,
            stage_channels: [4, 6, 8],
            ..NetConfig::default()
        };
        CdisModel::new(config, classes, 31).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let model = tiny_model(Some(3));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.store.len(), model.store.len());
        assert_eq!(back.num_classes(), Some(3));
        for (a, b) in model.store.iter().zip(back.store.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let ab: Vec<u64> = a.value.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.value.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb, "values of {} differ", a.name);
        }
        // and the restored model computes identical embeddings
        let mut rng = component_rng(7, "ck");
        let img = Image {
            size: 16,
            data: (0..3 * 16 * 16).map(|_| rng.gen_range(0.0..1.0)).collect(),
        };
        let e1 = model.embed_image(&img).unwrap();
        let e2 = back.embed_image(&img).unwrap();
        let b1: Vec<u64> = e1.iter().map(|v| v.to_bits()).collect();
        let b2: Vec<u64> = e2.iter().map(|v| v.to_bits()).collect();
        assert_eq!(b1, b2);
    }

    #[test]
    fn corrupt_shape_is_a_mismatch_error() {
        let model = tiny_model(None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // swap one tensor's declared channel count
        let corrupted = text.replacen("backbone.stem.weight 2 16 3", "backbone.stem.weight 2 16 4", 1);
        assert_ne!(text, corrupted);
        std::fs::write(&path, corrupted).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
