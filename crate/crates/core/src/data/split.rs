use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use super::image_buf::Image;
use super::load::{DataError, LocationRecord};
use crate::cluster::View;
use crate::rng::component_rng;

/// One image in the unpaired pool. The id is an opaque token assigned at
/// split time; neither it nor any other field reveals the source location.
#[derive(Debug, Clone)]
pub struct UnpairedImage {
    pub id: String,
    pub view: View,
    pub image: Image,
}

/// The training-visible handle over unpaired data. By construction it carries
/// no location information: ids are opaque and there is no label accessor.
#[derive(Debug, Default, Clone)]
pub struct UnpairedPool {
    pub images: Vec<UnpairedImage>,
}

impl UnpairedPool {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn view_count(&self, view: View) -> usize {
        self.images.iter().filter(|i| i.view == view).count()
    }
}

/// Side channel mapping opaque unpaired ids back to source locations. Kept
/// out of the training path; used only for synthetic-data diagnostics such as
/// cluster purity.
#[derive(Debug, Default, Clone)]
pub struct SealedLabels {
    by_id: HashMap<String, String>,
}

impl SealedLabels {
    pub fn location_of(&self, opaque_id: &str) -> Option<&str> {
        self.by_id.get(opaque_id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

/// A supervision split: locations whose pairing labels are exposed, and the
/// remaining images with labels stripped.
#[derive(Debug, Clone)]
pub struct SupervisionSplit {
    pub paired: Vec<LocationRecord>,
    pub unpaired: UnpairedPool,
    pub gt_ratio: f64,
    pub seed: u64,
    diagnostics: SealedLabels,
}

impl SupervisionSplit {
    pub fn paired_location_ids(&self) -> Vec<String> {
        self.paired.iter().map(|r| r.location_id.clone()).collect()
    }

    /// Diagnostics-only access to the sealed labels.
    pub fn sealed_labels(&self) -> &SealedLabels {
        &self.diagnostics
    }
}

/// Seeded, location-level supervision split. `round(gt_ratio * locations)`
/// locations keep their pair labels; every image of the remaining locations
/// enters the unpaired pool under an opaque id. A positive ratio that rounds
/// to zero locations is an error.
pub fn split_supervision(
    records: &[LocationRecord],
    gt_ratio: f64,
    seed: u64,
) -> Result<SupervisionSplit, DataError> {
    if !(0.0..=1.0).contains(&gt_ratio) || !gt_ratio.is_finite() {
        return Err(DataError::BadRatio(gt_ratio));
    }
    let n = records.len();
    let paired_count = (gt_ratio * n as f64).round() as usize;
    if gt_ratio > 0.0 && paired_count == 0 {
        return Err(DataError::SplitTooSmall {
            locations: n,
            gt_ratio,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = component_rng(seed, "split");
    order.shuffle(&mut rng);
    let mut chosen: Vec<usize> = order[..paired_count].to_vec();
    chosen.sort_unstable();

    let mut paired = Vec::with_capacity(paired_count);
    let mut unpaired = UnpairedPool::default();
    let mut diagnostics = SealedLabels::default();
    let mut counter = 0usize;
    let mut chosen_iter = chosen.iter().peekable();
    for (i, rec) in records.iter().enumerate() {
        if chosen_iter.peek() == Some(&&i) {
            chosen_iter.next();
            paired.push(rec.clone());
            continue;
        }
        let mut push = |view: View, image: &Image| {
            let id = format!("u{counter:06}");
            counter += 1;
            diagnostics
                .by_id
                .insert(id.clone(), rec.location_id.clone());
            unpaired.images.push(UnpairedImage {
                id,
                view,
                image: image.clone(),
            });
        };
        for inst in &rec.satellite_images {
            push(View::Satellite, &inst.image);
        }
        for inst in &rec.drone_images {
            push(View::Drone, &inst.image);
        }
    }
    Ok(SupervisionSplit {
        paired,
        unpaired,
        gt_ratio,
        seed,
        diagnostics,
    })
}

/// Replay record for a split: seed, ratio, and the paired location ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    pub seed: u64,
    pub gt_ratio: f64,
    pub paired_location_ids: Vec<String>,
}

const SPLIT_MAGIC: &str = "crossview-split v1";

pub fn write_split_manifest(path: &Path, m: &SplitManifest) -> Result<(), DataError> {
    let mut out = String::new();
    out.push_str(SPLIT_MAGIC);
    out.push('\n');
    out.push_str(&format!("seed {}\n", m.seed));
    out.push_str(&format!("gt_ratio {}\n", m.gt_ratio));
    out.push_str(&format!("paired {}\n", m.paired_location_ids.len()));
    for id in &m.paired_location_ids {
        out.push_str(id);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_split_manifest(path: &Path) -> Result<SplitManifest, DataError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let err = |line: usize, msg: &str| DataError::Manifest {
        line: line + 1,
        msg: msg.to_string(),
    };
    let (i, magic) = lines.next().ok_or_else(|| err(0, "empty file"))?;
    if magic.trim() != SPLIT_MAGIC {
        return Err(err(i, "bad magic"));
    }
    let mut seed = None;
    let mut gt_ratio = None;
    let mut count = None;
    for _ in 0..3 {
        let (i, line) = lines.next().ok_or_else(|| err(0, "truncated header"))?;
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next()) {
            (Some("seed"), Some(v)) => {
                seed = Some(v.parse().map_err(|_| err(i, "bad seed"))?);
            }
            (Some("gt_ratio"), Some(v)) => {
                gt_ratio = Some(v.parse().map_err(|_| err(i, "bad gt_ratio"))?);
            }
            (Some("paired"), Some(v)) => {
                count = Some(v.parse::<usize>().map_err(|_| err(i, "bad count"))?);
            }
            _ => return Err(err(i, "unrecognized header line")),
        }
    }
    let (seed, gt_ratio, count) = (
        seed.ok_or_else(|| err(0, "missing seed"))?,
        gt_ratio.ok_or_else(|| err(0, "missing gt_ratio"))?,
        count.ok_or_else(|| err(0, "missing paired count"))?,
    );
    let ids: Vec<String> = lines
        .map(|(_, l)| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    if ids.len() != count {
        return Err(DataError::Manifest {
            line: 0,
            msg: format!("expected {count} paired ids, found {}", ids.len()),
        });
    }
    Ok(SplitManifest {
        seed,
        gt_ratio,
        paired_location_ids: ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load::ImageInstance;

    fn toy_records(n: usize) -> Vec<LocationRecord> {
        (0..n)
            .map(|i| {
                let mk = |name: &str| ImageInstance {
                    id: format!("loc{i:04}/{name}"),
                    image: Image::zeros(8),
                };
                LocationRecord {
                    location_id: format!("loc{i:04}"),
                    satellite_images: vec![mk("satellite/0000.png")],
                    drone_images: vec![mk("drone/0000.png"), mk("drone/0001.png")],
                }
            })
            .collect()
    }

    #[test]
    fn full_ratio_leaves_pool_empty_and_zero_leaves_paired_empty() {
        let records = toy_records(5);
        let full = split_supervision(&records, 1.0, 3).unwrap();
        assert_eq!(full.paired.len(), 5);
        assert!(full.unpaired.is_empty());

        let none = split_supervision(&records, 0.0, 3).unwrap();
        assert!(none.paired.is_empty());
        assert_eq!(none.unpaired.len(), 15);
    }

    #[test]
    fn two_percent_of_hundred_is_exactly_two() {
        let records = toy_records(100);
        let s = split_supervision(&records, 0.02, 9).unwrap();
        assert_eq!(s.paired.len(), 2);
    }

    #[test]
    fn ratio_rounding_to_zero_is_an_error() {
        let records = toy_records(10);
        assert!(matches!(
            split_supervision(&records, 0.02, 1),
            Err(DataError::SplitTooSmall { .. })
        ));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let records = toy_records(20);
        let a = split_supervision(&records, 0.25, 77).unwrap();
        let b = split_supervision(&records, 0.25, 77).unwrap();
        assert_eq!(a.paired_location_ids(), b.paired_location_ids());
        let c = split_supervision(&records, 0.25, 78).unwrap();
        // different seed should (here) pick a different subset
        assert_ne!(a.paired_location_ids(), c.paired_location_ids());
        // paired and unpaired locations are disjoint
        let paired = a.paired_location_ids();
        for img in &a.unpaired.images {
            let loc = a.sealed_labels().location_of(&img.id).unwrap();
            assert!(!paired.contains(&loc.to_string()));
        }
    }

    #[test]
    fn unpaired_ids_are_opaque() {
        let records = toy_records(10);
        let s = split_supervision(&records, 0.2, 5).unwrap();
        for img in &s.unpaired.images {
            assert!(
                img.id.starts_with('u') && !img.id.contains("loc"),
                "unpaired id {} must not reveal its location",
                img.id
            );
        }
        // sealed side channel still resolves them
        assert_eq!(s.sealed_labels().len(), s.unpaired.len());
    }

    #[test]
    fn manifest_round_trip() {
        let m = SplitManifest {
            seed: 42,
            gt_ratio: 0.1,
            paired_location_ids: vec!["loc0001".into(), "loc0007".into()],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.txt");
        write_split_manifest(&path, &m).unwrap();
        assert_eq!(read_split_manifest(&path).unwrap(), m);
    }
}
