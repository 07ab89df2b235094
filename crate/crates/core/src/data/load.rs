use std::fmt;
use std::fs;
use std::path::Path;

use super::image_buf::{load_image, Image};

#[derive(Debug)]
pub enum DataError {
    Io(std::io::Error),
    NotADirectory(String),
    BadImage { path: String, msg: String },
    BadRatio(f64),
    SplitTooSmall { locations: usize, gt_ratio: f64 },
    EmptyDataset,
    BadSpec(String),
    Manifest { line: usize, msg: String },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "dataset I/O: {e}"),
            Self::NotADirectory(p) => write!(f, "{p} is not a directory"),
            Self::BadImage { path, msg } => write!(f, "image {path}: {msg}"),
            Self::BadRatio(r) => write!(f, "gt_ratio must be in [0,1], got {r}"),
            Self::SplitTooSmall { locations, gt_ratio } => write!(
                f,
                "gt_ratio {gt_ratio} rounds to zero paired locations out of {locations}; need at least 1"
            ),
            Self::EmptyDataset => write!(f, "dataset has no usable locations"),
            Self::BadSpec(msg) => write!(f, "bad synthetic spec: {msg}"),
            Self::Manifest { line, msg } => write!(f, "split manifest line {line}: {msg}"),
        }
    }
}

impl std::error::Error for DataError {}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

/// One decoded image plus its stable instance id
/// (`<location>/<view>/<filename>`).
#[derive(Debug, Clone)]
pub struct ImageInstance {
    pub id: String,
    pub image: Image,
}

/// All images of one location. Every image decodes to 3 x S x S for the size
/// passed to [`load_dataset`].
#[derive(Debug, Clone)]
pub struct LocationRecord {
    pub location_id: String,
    pub satellite_images: Vec<ImageInstance>,
    pub drone_images: Vec<ImageInstance>,
}

/// Locations rejected (with reasons)plus per-image warnings from one load.
#[derive(Debug, Default, Clone)]
pub struct LoadReport {
    pub rejected: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

fn list_sorted_dirs(root: &Path) -> Result<Vec<String>, DataError> {
    let mut names = Vec::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

fn list_sorted_images(dir: &Path) -> Result<Vec<String>, DataError> {
    let mut names = Vec::new();
    if !dir.is_dir() {
        return Ok(names);
    }
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let lower = name.to_lowercase();
        if lower.ends_with(".png") || lower.ends_with(".jpg") || lower.ends_with(".jpeg") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn sanitize(token: &str) -> String {
    token
        .chars()
        .map(|c| if c.is_whitespace() { '_' } else { c })
        .collect()
}

/// Load a dataset tree: `<root>/<location_id>/{satellite,drone}/*.png|jpg`,
/// every image resized to `size`. Ordering is lexicographic by location id
/// and by filename, so repeated loads of the same tree are identical.
/// Locations without a decodable satellite image are rejected with a report
/// entry; individual unreadable images are skipped with a warning.
pub fn load_dataset(
    root: &Path,
    size: usize,
) -> Result<(Vec<LocationRecord>, LoadReport), DataError> {
    if !root.is_dir() {
        return Err(DataError::NotADirectory(root.display().to_string()));
    }
    let mut report = LoadReport::default();
    let mut records = Vec::new();
    for loc in list_sorted_dirs(root)? {
        let loc_dir = root.join(&loc);
        let loc_id = sanitize(&loc);
        let mut load_side = |side: &str| -> Result<Vec<ImageInstance>, DataError> {
            let mut out = Vec::new();
            for name in list_sorted_images(&loc_dir.join(side))? {
                let path = loc_dir.join(side).join(&name);
                match load_image(&path, size) {
                    Ok(image) => out.push(ImageInstance {
                        id: format!("{loc_id}/{side}/{}", sanitize(&name)),
                        image,
                    }),
                    Err(e) => report.warnings.push(format!("skipped {}: {e}", path.display())),
                }
            }
            Ok(out)
        };
        let satellite_images = load_side("satellite")?;
        let drone_images = load_side("drone")?;
        if satellite_images.is_empty() {
            report
                .rejected
                .push((loc_id, "no decodable satellite image".into()));
            continue;
        }
        records.push(LocationRecord {
            location_id: loc_id,
            satellite_images,
            drone_images,
        });
    }
    Ok((records, report))
}
