//! DBSCAN over unit-norm embeddings, pseudo-label purity, and the textual
//! embedding file format.
//!
//! Distances are cosine distances (`1 - dot`), which coincide with angular
//! separation because every embedding is unit-norm. The neighborhood search is
//! exact O(n^2); at the scales this crate targets an index structure would not
//! pay for itself.

use std::collections::VecDeque;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Which side of the cross-view pair an instance belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum View {
    Drone,
    Satellite,
}

impl View {
    pub fn as_str(&self) -> &'static str {
        match self {
            View::Drone => "d",
            View::Satellite => "s",
        }
    }

    pub fn parse(s: &str) -> Option<View> {
        match s {
            "d" => Some(View::Drone),
            "s" => Some(View::Satellite),
            _ => None,
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug)]
pub enum ClusterError {
    EmptyVector,
    ZeroNorm,
    NonUnitNorm { id: String, norm: f64 },
    DimensionMismatch { expected: usize, got: usize },
    BadParams(String),
    EmptyMemory,
}

impl fmt::Display for ClusterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyVector => write!(f, "embedding vector is empty"),
            Self::ZeroNorm => write!(f, "cannot normalize a zero vector"),
            Self::NonUnitNorm { id, norm } => {
                write!(f, "embedding {id} has norm {norm}, expected 1 within 1e-6")
            }
            Self::DimensionMismatch { expected, got } => {
                write!(f, "embedding dimension {got}, expected {expected}")
            }
            Self::BadParams(msg) => write!(f, "bad clustering parameters: {msg}"),
            Self::EmptyMemory => write!(f, "cluster memory has zero centroids"),
        }
    }
}

impl std::error::Error for ClusterError {}

/// Unit-norm descriptor of one image instance.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub id: String,
    pub view: View,
    pub vector: Vec<f64>,
}

impl Embedding {
    /// Wrap an already unit-norm vector; rejects norms outside 1 +- 1e-6.
    pub fn new(id: impl Into<String>, view: View, vector: Vec<f64>) -> Result<Self, ClusterError> {
        if vector.is_empty() {
            return Err(ClusterError::EmptyVector);
        }
        let id = id.into();
        let norm = l2(&vector);
        if (norm - 1.0).abs() > 1e-6 {
            return Err(ClusterError::NonUnitNorm { id, norm });
        }
        Ok(Embedding { id, view, vector })
    }

    /// Normalize a raw vector to unit length.
    pub fn normalized(
        id: impl Into<String>,
        view: View,
        mut vector: Vec<f64>,
    ) -> Result<Self, ClusterError> {
        if vector.is_empty() {
            return Err(ClusterError::EmptyVector);
        }
        let norm = l2(&vector);
        if norm < 1e-12 {
            return Err(ClusterError::ZeroNorm);
        }
        for v in &mut vector {
            *v /= norm;
        }
        Ok(Embedding {
            id: id.into(),
            view,
            vector,
        })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Cosine distance between unit vectors.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - dot(a, b)
}

/// Per-instance cluster labels: -1 is noise, otherwise 0..cluster_count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub labels: Vec<i64>,
    pub cluster_count: usize,
}

impl ClusterAssignment {
    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == -1).count()
    }

    /// Member indices per cluster, in input order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.cluster_count];
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= 0 {
                m[l as usize].push(i);
            }
        }
        m
    }
}

fn check_points(points: &[Embedding]) -> Result<usize, ClusterError> {
    let dim = points[0].dim();
    for p in points {
        if p.dim() != dim {
            return Err(ClusterError::DimensionMismatch {
                expected: dim,
                got: p.dim(),
            });
        }
        let norm = l2(&p.vector);
        if (norm - 1.0).abs() > 1e-6 {
            return Err(ClusterError::NonUnitNorm {
                id: p.id.clone(),
                norm,
            });
        }
    }
    Ok(dim)
}

fn neighbor_lists(points: &[Embedding], eps: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        neighbors[i].push(i);
    }
    for i in 0..n {
        for j in i + 1..n {
            if cosine_distance(&points[i].vector, &points[j].vector) <= eps {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    neighbors
}

/// Density-based clustering with noise. Core points have at least
/// `min_samples` neighbors within `eps` (self included); clusters grow by
/// density reachability; border points go to the first cluster that reaches
/// them in scan order, so the result is deterministic given input order.
pub fn dbscan(
    points: &[Embedding],
    eps: f64,
    min_samples: usize,
) -> Result<ClusterAssignment, ClusterError> {
    if eps <= 0.0 {
        return Err(ClusterError::BadParams(format!("eps must be > 0, got {eps}")));
    }
    if min_samples < 1 {
        return Err(ClusterError::BadParams("min_samples must be >= 1".into()));
    }
    if points.is_empty() {
        return Ok(ClusterAssignment {
            labels: Vec::new(),
            cluster_count: 0,
        });
    }
    check_points(points)?;
    let n = points.len();
    let neighbors = neighbor_lists(points, eps);
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_samples).collect();

    const UNVISITED: i64 = -2;
    let mut labels = vec![UNVISITED; n];
    let mut cluster: i64 = 0;
    let mut queue = VecDeque::new();
    for i in 0..n {
        if labels[i] != UNVISITED {
            continue;
        }
        if !core[i] {
            labels[i] = -1;
            continue;
        }
        labels[i] = cluster;
        queue.clear();
        queue.extend(neighbors[i].iter().copied());
        while let Some(j) = queue.pop_front() {
            if labels[j] == -1 {
                labels[j] = cluster; // noise becomes a border point
            }
            if labels[j] != UNVISITED {
                continue;
            }
            labels[j] = cluster;
            if core[j] {
                queue.extend(neighbors[j].iter().copied());
            }
        }
        cluster += 1;
    }
    Ok(ClusterAssignment {
        labels,
        cluster_count: cluster as usize,
    })
}

/// Independent reference DBSCAN used by self-checks and tests. Computes core
/// points by brute force, merges core-core edges with union-find, orders
/// clusters by their smallest core index, and attaches each border point to
/// the earliest cluster containing one of its core neighbors. This replicates
/// first-come border assignment without sharing any traversal code with
/// [`dbscan`].
pub mod reference {
    use super::{check_points, cosine_distance, ClusterAssignment, ClusterError, Embedding};

    struct UnionFind(Vec<usize>);

    impl UnionFind {
        fn new(n: usize) -> Self {
            UnionFind((0..n).collect())
        }
        fn find(&mut self, i: usize) -> usize {
            if self.0[i] != i {
                let root = self.find(self.0[i]);
                self.0[i] = root;
            }
            self.0[i]
        }
        fn union(&mut self, a: usize, b: usize) {
            let (ra, rb) = (self.find(a), self.find(b));
            if ra != rb {
                self.0[ra.max(rb)] = ra.min(rb);
            }
        }
    }

    pub fn dbscan_reference(
        points: &[Embedding],
        eps: f64,
        min_samples: usize,
    ) -> Result<ClusterAssignment, ClusterError> {
        if eps <= 0.0 || min_samples < 1 {
            return Err(ClusterError::BadParams("eps > 0 and min_samples >= 1".into()));
        }
        if points.is_empty() {
            return Ok(ClusterAssignment {
                labels: Vec::new(),
                cluster_count: 0,
            });
        }
        check_points(points)?;
        let n = points.len();
        let within = |i: usize, j: usize| {
            cosine_distance(&points[i].vector, &points[j].vector) <= eps
        };
        let mut degree = vec![0usize; n];
        for i in 0..n {
            for j in 0..n {
                if within(i, j) {
                    degree[i] += 1;
                }
            }
        }
        let core: Vec<bool> = degree.iter().map(|&d| d >= min_samples).collect();

        let mut uf = UnionFind::new(n);
        for i in 0..n {
            if !core[i] {
                continue;
            }
            for j in i + 1..n {
                if core[j] && within(i, j) {
                    uf.union(i, j);
                }
            }
        }
        // Order clusters by smallest core index per component.
        let mut cluster_of_root: Vec<(usize, i64)> = Vec::new();
        let mut labels = vec![-1i64; n];
        let mut next = 0i64;
        for i in 0..n {
            if !core[i] {
                continue;
            }
            let root = uf.find(i);
            let id = match cluster_of_root.iter().find(|(r, _)| *r == root) {
                Some((_, id)) => *id,
                None => {
                    let id = next;
                    cluster_of_root.push((root, id));
                    next += 1;
                    id
                }
            };
            labels[i] = id;
        }
        // Border points: earliest cluster among core neighbors.
        for i in 0..n {
            if core[i] {
                continue;
            }
            let mut best: Option<i64> = None;
            for j in 0..n {
                if core[j] && within(i, j) {
                    let c = labels[j];
                    best = Some(best.map_or(c, |b: i64| b.min(c)));
                }
            }
            if let Some(c) = best {
                labels[i] = c;
            }
        }
        Ok(ClusterAssignment {
            labels,
            cluster_count: next as usize,
        })
    }
}

/// Canonical relabeling by first appearance, for label-set comparisons.
pub fn canonical_labels(labels: &[i64]) -> Vec<i64> {
    let mut map: Vec<(i64, i64)> = Vec::new();
    let mut next = 0i64;
    labels
        .iter()
        .map(|&l| {
            if l < 0 {
                return -1;
            }
            match map.iter().find(|(from, _)| *from == l) {
                Some((_, to)) => *to,
                None => {
                    let to = next;
                    map.push((l, to));
                    next += 1;
                    to
                }
            }
        })
        .collect()
}

/// Fraction of non-noise instances whose cluster's majority location matches
/// their own. `all_noise` flags the degenerate case where nothing clustered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PurityReport {
    pub value: f64,
    pub all_noise: bool,
}

pub fn purity(assignment: &ClusterAssignment, locations: &[usize]) -> PurityReport {
    assert_eq!(assignment.labels.len(), locations.len());
    let members = assignment.members();
    let clustered: usize = members.iter().map(Vec::len).sum();
    if clustered == 0 {
        return PurityReport {
            value: 0.0,
            all_noise: true,
        };
    }
    let mut matches = 0usize;
    for cluster in &members {
        if cluster.is_empty() {
            continue;
        }
        // Majority location; ties break to the smallest location id.
        let mut counts: Vec<(usize, usize)> = Vec::new();
        for &i in cluster {
            match counts.iter_mut().find(|(loc, _)| *loc == locations[i]) {
                Some((_, c)) => *c += 1,
                None => counts.push((locations[i], 1)),
            }
        }
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let majority = counts[0].0;
        matches += cluster.iter().filter(|&&i| locations[i] == majority).count();
    }
    PurityReport {
        value: matches as f64 / clustered as f64,
        all_noise: false,
    }
}

// ── embedding file format ───────────────────────────────────────────────

const EMBEDDING_MAGIC: &str = "crossview-embeddings v1";

/// One row of the embedding file: the embedding plus an optional location tag
/// (present only for data whose labels may be exposed, e.g. synthetic
/// diagnostics).
#[derive(Debug, Clone)]
pub struct EmbeddingRecord {
    pub embedding: Embedding,
    pub location: Option<String>,
}

#[derive(Debug)]
pub enum EmbeddingFileError {
    Io(std::io::Error),
    Parse { line: usize, msg: String },
}

impl fmt::Display for EmbeddingFileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "embedding file I/O: {e}"),
            Self::Parse { line, msg } => write!(f, "embedding file line {line}: {msg}"),
        }
    }
}

impl std::error::Error for EmbeddingFileError {}

impl From<std::io::Error> for EmbeddingFileError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

fn view_tag(records: &[EmbeddingRecord]) -> &'static str {
    let mut drone = false;
    let mut sat = false;
    for r in records {
        match r.embedding.view {
            View::Drone => drone = true,
            View::Satellite => sat = true,
        }
    }
    match (drone, sat) {
        (true, false) => "d",
        (false, true) => "s",
        _ => "mixed",
    }
}

/// Write records in the textual embedding format: a magic line, a header with
/// dimension / count / view tag, then one whitespace-separated record per
/// line (`id view location components...`). Floats use shortest round-trip
/// formatting, so a read-back restores them bit-exactly.
pub fn write_embeddings(
    path: &Path,
    records: &[EmbeddingRecord],
) -> Result<(), EmbeddingFileError> {
    let dim = records.first().map_or(0, |r| r.embedding.dim());
    for r in records {
        if r.embedding.id.split_whitespace().count() != 1 {
            return Err(EmbeddingFileError::Parse {
                line: 0,
                msg: format!("id {:?} must be a single token", r.embedding.id),
            });
        }
        if let Some(loc) = &r.location {
            if loc.split_whitespace().count() != 1 {
                return Err(EmbeddingFileError::Parse {
                    line: 0,
                    msg: format!("location {loc:?} must be a single token"),
                });
            }
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{EMBEDDING_MAGIC}")?;
    writeln!(w, "dim {dim} count {} view {}", records.len(), view_tag(records))?;
    for r in records {
        write!(w, "{} {} {}", r.embedding.id, r.embedding.view, r.location.as_deref().unwrap_or("-"))?;
        for v in &r.embedding.vector {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug)]
pub struct EmbeddingFile {
    pub dim: usize,
    pub records: Vec<EmbeddingRecord>,
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingFile, EmbeddingFileError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let parse_err = |line: usize, msg: String| EmbeddingFileError::Parse { line: line + 1, msg };

    let (i, magic) = lines
        .next()
        .ok_or_else(|| parse_err(0, "empty file".into()))?;
    let magic = magic?;
    if magic.trim() != EMBEDDING_MAGIC {
        return Err(parse_err(i, format!("bad magic {magic:?}")));
    }
    let (i, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header".into()))?;
    let header = header?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 6 || tokens[0] != "dim" || tokens[2] != "count" || tokens[4] != "view" {
        return Err(parse_err(i, format!("bad header {header:?}")));
    }
    let dim: usize = tokens[1]
        .parse()
        .map_err(|_| parse_err(i, format!("bad dim {:?}", tokens[1])))?;
    let count: usize = tokens[3]
        .parse()
        .map_err(|_| parse_err(i, format!("bad count {:?}", tokens[3])))?;
    let header_view = tokens[5].to_string();

    let mut records = Vec::with_capacity(count);
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 3 + dim {
            return Err(parse_err(
                i,
                format!("expected {} fields, got {}", 3 + dim, tokens.len()),
            ));
        }
        let view = View::parse(tokens[1])
            .ok_or_else(|| parse_err(i, format!("bad view tag {:?}", tokens[1])))?;
        if header_view != "mixed" && view.as_str() != header_view {
            return Err(parse_err(
                i,
                format!("row view {view} contradicts header view {header_view}"),
            ));
        }
        let location = if tokens[2] == "-" {
            None
        } else {
            Some(tokens[2].to_string())
        };
        let mut vector = Vec::with_capacity(dim);
        for t in &tokens[3..] {
            vector.push(
                t.parse::<f64>()
                    .map_err(|_| parse_err(i, format!("bad float {t:?}")))?,
            );
        }
        let embedding = Embedding::new(tokens[0], view, vector)
            .map_err(|e| parse_err(i, e.to_string()))?;
        records.push(EmbeddingRecord {
            embedding,
            location,
        });
    }
    if records.len() != count {
        return Err(EmbeddingFileError::Parse {
            line: 0,
            msg: format!("header count {count} but {} records", records.len()),
        });
    }
    Ok(EmbeddingFile { dim, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::component_rng;
    use rand::seq::SliceRandom;
    use rand::Rng;

    pub(crate) fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = l2(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    fn emb(id: usize, v: Vec<f64>) -> Embedding {
        Embedding::new(format!("p{id}"), View::Drone, unit(v)).unwrap()
    }

    fn random_unit(rng: &mut rand_chacha::ChaCha8Rng, dim: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if l2(&v) > 1e-3 {
                return unit(v);
            }
        }
    }

    #[test]
    fn four_identical_vectors_form_one_cluster() {
        let points: Vec<Embedding> = (0..4).map(|i| emb(i, vec![1.0, 0.0, 0.0])).collect();
        let a = dbscan(&points, 0.40, 4).unwrap();
        assert_eq!(a.cluster_count, 1);
        assert_eq!(a.labels, vec![0, 0, 0, 0]);
        assert_eq!(a.noise_count(), 0);
    }

    #[test]
    fn empty_input_yields_empty_assignment() {
        let a = dbscan(&[], 0.3, 4).unwrap();
        assert_eq!(a.cluster_count, 0);
        assert!(a.labels.is_empty());
    }

    #[test]
    fn rejects_bad_params_and_non_unit_vectors() {
        let p = vec![emb(0, vec![1.0, 0.0])];
        assert!(dbscan(&p, 0.0, 4).is_err());
        assert!(dbscan(&p, 0.4, 0).is_err());
        assert!(Embedding::new("x", View::Drone, vec![0.5, 0.0]).is_err());
    }

    #[test]
    fn matches_reference_on_random_instances() {
        let mut rng = component_rng(101, "dbscan-oracle");
        for trial in 0..60 {
            let n = rng.gen_range(2..=80);
            let dim = rng.gen_range(2..=8);
            let eps = [0.30, 0.40, 0.1, 0.6][trial % 4];
            let min_samples = rng.gen_range(1..=5);
            let points: Vec<Embedding> = (0..n)
                .map(|i| Embedding::new(format!("p{i}"), View::Drone, random_unit(&mut rng, dim)).unwrap())
                .collect();
            let fast = dbscan(&points, eps, min_samples).unwrap();
            let slow = reference::dbscan_reference(&points, eps, min_samples).unwrap();
            assert_eq!(
                canonical_labels(&fast.labels),
                canonical_labels(&slow.labels),
                "trial {trial}: n={n} dim={dim} eps={eps} min={min_samples}"
            );
            assert_eq!(fast.cluster_count, slow.cluster_count);
        }
    }

    #[test]
    fn permutation_shuffles_only_relabel() {
        // Well-separated blobs have no ambiguous borders, so the induced
        // partition must be order-independent.
        let mut rng = component_rng(103, "dbscan-perm");
        let centers = [
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let mut points = Vec::new();
        for (ci, c) in centers.iter().enumerate() {
            for k in 0..6 {
                let v: Vec<f64> = c
                    .iter()
                    .map(|x| x + rng.gen_range(-0.05..0.05))
                    .collect();
                points.push(Embedding::new(format!("b{ci}_{k}"), View::Drone, unit(v)).unwrap());
            }
        }
        let base = dbscan(&points, 0.2, 4).unwrap();
        let partition = |pts: &[Embedding], a: &ClusterAssignment| {
            let mut sets: Vec<Vec<String>> = vec![Vec::new(); a.cluster_count + 1];
            for (i, &l) in a.labels.iter().enumerate() {
                let slot = if l < 0 { a.cluster_count } else { l as usize };
                sets[slot].push(pts[i].id.clone());
            }
            for s in &mut sets {
                s.sort();
            }
            sets.sort();
            sets
        };
        let base_partition = partition(&points, &base);
        for _ in 0..5 {
            let mut shuffled = points.clone();
            shuffled.shuffle(&mut rng);
            let a = dbscan(&shuffled, 0.2, 4).unwrap();
            assert_eq!(partition(&shuffled, &a), base_partition);
            // And in every ordering the implementation agrees with the oracle.
            let slow = reference::dbscan_reference(&shuffled, 0.2, 4).unwrap();
            assert_eq!(canonical_labels(&a.labels), canonical_labels(&slow.labels));
        }
    }

    #[test]
    fn shrinking_eps_never_decreases_noise() {
        let mut rng = component_rng(107, "dbscan-noise");
        let points: Vec<Embedding> = (0..60)
            .map(|i| Embedding::new(format!("p{i}"), View::Drone, random_unit(&mut rng, 3)).unwrap())
            .collect();
        let mut last_noise = 0usize;
        for eps in [0.8, 0.6, 0.4, 0.3, 0.2, 0.1, 0.05] {
            let a = dbscan(&points, eps, 4).unwrap();
            assert!(
                a.noise_count() >= last_noise,
                "noise dropped from {last_noise} to {} at eps {eps}",
                a.noise_count()
            );
            last_noise = a.noise_count();
        }
    }

    #[test]
    fn purity_perfect_and_half_mixed() {
        let a = ClusterAssignment {
            labels: vec![0, 0, 1, 1],
            cluster_count: 2,
        };
        assert_eq!(purity(&a, &[5, 5, 9, 9]).value, 1.0);
        // two clusters, each half from location 0 and half from location 1
        let b = ClusterAssignment {
            labels: vec![0, 0, 1, 1],
            cluster_count: 2,
        };
        assert_eq!(purity(&b, &[0, 1, 0, 1]).value, 0.5);
    }

    #[test]
    fn purity_all_noise_is_flagged_zero() {
        let a = ClusterAssignment {
            labels: vec![-1, -1],
            cluster_count: 0,
        };
        let r = purity(&a, &[0, 1]);
        assert_eq!(r.value, 0.0);
        assert!(r.all_noise);
    }

    #[test]
    fn purity_random_assignment_is_near_chance() {
        // Monte Carlo oracle: balanced 4-location data under uniformly random
        // cluster assignment should sit near 1/4.
        let mut rng = component_rng(109, "purity-mc");
        let n = 200;
        let locations: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let mut sum = 0.0;
        let trials = 50;
        for _ in 0..trials {
            let labels: Vec<i64> = (0..n).map(|_| rng.gen_range(0..4i64)).collect();
            let a = ClusterAssignment {
                labels,
                cluster_count: 4,
            };
            sum += purity(&a, &locations).value;
        }
        let mean = sum / trials as f64;
        assert!((mean - 0.25).abs() < 0.1, "mean purity {mean}");
    }

    #[test]
    fn embedding_file_round_trip_is_bit_exact() {
        let mut rng = component_rng(113, "embfile");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        let records: Vec<EmbeddingRecord> = (0..5)
            .map(|i| EmbeddingRecord {
                embedding: Embedding::new(
                    format!("img{i:03}"),
                    if i % 2 == 0 { View::Drone } else { View::Satellite },
                    random_unit(&mut rng, 6),
                )
                .unwrap(),
                location: if i < 3 { Some(format!("loc{i}")) } else { None },
            })
            .collect();
        write_embeddings(&path, &records).unwrap();
        let back = read_embeddings(&path).unwrap();
        assert_eq!(back.dim, 6);
        assert_eq!(back.records.len(), 5);
        for (a, b) in back.records.iter().zip(records.iter()) {
            assert_eq!(a.embedding.id, b.embedding.id);
            assert_eq!(a.embedding.view, b.embedding.view);
            assert_eq!(a.location, b.location);
            // bit-exact float round trip
            let ab: Vec<u64> = a.embedding.vector.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.embedding.vector.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn embedding_file_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(
            &path,
            "crossview-embeddings v1\ndim 2 count 1 view d\nimg0 d - 0.8 oops\n",
        )
        .unwrap();
        match read_embeddings(&path) {
            Err(EmbeddingFileError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
