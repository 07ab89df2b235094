//! Retrieval metrics: gallery ranking, Recall@K, Average Precision, and the
//! positive/negative similarity-overlap statistic.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cluster::{dot, Embedding};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    DroneToSatellite,
    SatelliteToDrone,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::DroneToSatellite => "d2s",
            Direction::SatelliteToDrone => "s2d",
        }
    }

    pub fn parse(s: &str) -> Option<Direction> {
        match s {
            "d2s" => Some(Direction::DroneToSatellite),
            "s2d" => Some(Direction::SatelliteToDrone),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug)]
pub enum EvalError {
    EmptyGallery,
    EmptyQueries,
    ViewsMustDiffer,
    MixedViewSet(&'static str),
    DimensionMismatch { expected: usize, got: usize },
    BadK(usize),
    MissingRelevance { query: String },
    BadBins(usize),
    NoSamples(&'static str),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyGallery => write!(f, "gallery is empty"),
            Self::EmptyQueries => write!(f, "query set is empty"),
            Self::ViewsMustDiffer => write!(f, "query and gallery views must differ"),
            Self::MixedViewSet(which) => write!(f, "{which} contains mixed views"),
            Self::DimensionMismatch { expected, got } => {
                write!(f, "embedding dimension {got}, expected {expected}")
            }
            Self::BadK(k) => write!(f, "K must be >= 1, got {k}"),
            Self::MissingRelevance { query } => {
                write!(f, "query {query} has no relevant gallery item")
            }
            Self::BadBins(b) => write!(f, "need >= 10 histogram bins, got {b}"),
            Self::NoSamples(which) => write!(f, "no {which} similarity samples"),
        }
    }
}

impl std::error::Error for EvalError {}

/// One query's ranked gallery with similarity scores, non-increasing; ties
/// break by gallery id (lexicographic).
#[derive(Debug, Clone)]
pub struct RankedQuery {
    pub query_id: String,
    pub ranking: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct RetrievalResult {
    pub direction: Direction,
    pub queries: Vec<RankedQuery>,
}

/// Relevant gallery ids per query id.
#[derive(Debug, Clone, Default)]
pub struct RelevanceTable(pub BTreeMap<String, BTreeSet<String>>);

impl RelevanceTable {
    pub fn insert(&mut self, query: &str, gallery: &str) {
        self.0
            .entry(query.to_string())
            .or_default()
            .insert(gallery.to_string());
    }

    pub fn relevant(&self, query: &str) -> Option<&BTreeSet<String>> {
        self.0.get(query)
    }
}

/// Full similarity matrix between cross-view query and gallery sets, each
/// query's gallery sorted by descending dot product.
pub fn rank_gallery(
    queries: &[Embedding],
    gallery: &[Embedding],
) -> Result<RetrievalResult, EvalError> {
    if gallery.is_empty() {
        return Err(EvalError::EmptyGallery);
    }
    if queries.is_empty() {
        return Err(EvalError::EmptyQueries);
    }
    let qview = queries[0].view;
    if queries.iter().any(|q| q.view != qview) {
        return Err(EvalError::MixedViewSet("queries"));
    }
    let gview = gallery[0].view;
    if gallery.iter().any(|g| g.view != gview) {
        return Err(EvalError::MixedViewSet("gallery"));
    }
    if qview == gview {
        return Err(EvalError::ViewsMustDiffer);
    }
    let dim = queries[0].dim();
    for e in queries.iter().chain(gallery.iter()) {
        if e.dim() != dim {
            return Err(EvalError::DimensionMismatch {
                expected: dim,
                got: e.dim(),
            });
        }
    }
    let direction = match qview {
        crate::cluster::View::Drone => Direction::DroneToSatellite,
        crate::cluster::View::Satellite => Direction::SatelliteToDrone,
    };
    let mut out = Vec::with_capacity(queries.len());
    for q in queries {
        let mut ranking: Vec<(String, f64)> = gallery
            .iter()
            .map(|g| (g.id.clone(), dot(&q.vector, &g.vector)))
            .collect();
        ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out.push(RankedQuery {
            query_id: q.id.clone(),
            ranking,
        });
    }
    Ok(RetrievalResult {
        direction,
        queries: out,
    })
}

/// Fraction of queries with at least one relevant item in the top K.
pub fn recall_at_k(
    result: &RetrievalResult,
    relevance: &RelevanceTable,
    k: usize,
) -> Result<f64, EvalError> {
    if k < 1 {
        return Err(EvalError::BadK(k));
    }
    if result.queries.is_empty() {
        return Err(EvalError::EmptyQueries);
    }
    let mut hits = 0usize;
    for q in &result.queries {
        let rel = relevance
            .relevant(&q.query_id)
            .filter(|r| !r.is_empty())
            .ok_or_else(|| EvalError::MissingRelevance {
                query: q.query_id.clone(),
            })?;
        if q.ranking
            .iter()
            .take(k)
            .any(|(gid, _)| rel.contains(gid))
        {
            hits += 1;
        }
    }
    Ok(hits as f64 / result.queries.len() as f64)
}

#[derive(Debug, Clone)]
pub struct ApReport {
    /// AP per query, in result order; queries with no relevant item excluded.
    pub per_query: Vec<(String, f64)>,
    pub mean: f64,
    pub excluded: usize,
}

/// Average precision: mean over relevant items of the precision at that
/// item's rank; dataset score is the mean over queries. Queries with zero
/// relevant items are excluded with a warning.
pub fn average_precision(result: &RetrievalResult, relevance: &RelevanceTable) -> ApReport {
    let mut per_query = Vec::new();
    let mut excluded = 0usize;
    for q in &result.queries {
        let rel = match relevance.relevant(&q.query_id).filter(|r| !r.is_empty()) {
            Some(r) => r,
            None => {
                log::warn!("query {} has no relevant gallery item; excluded from AP", q.query_id);
                excluded += 1;
                continue;
            }
        };
        let mut found = 0usize;
        let mut acc = 0.0;
        for (rank0, (gid, _)) in q.ranking.iter().enumerate() {
            if rel.contains(gid) {
                found += 1;
                acc += found as f64 / (rank0 + 1) as f64;
            }
        }
        let denom = rel.iter().filter(|r| q.ranking.iter().any(|(g, _)| g == *r)).count();
        let ap = if denom == 0 { 0.0 } else { acc / denom as f64 };
        per_query.push((q.query_id.clone(), ap));
    }
    let mean = if per_query.is_empty() {
        0.0
    } else {
        per_query.iter().map(|(_, v)| v).sum::<f64>() / per_query.len() as f64
    };
    ApReport {
        per_query,
        mean,
        excluded,
    }
}

/// Normalized histograms of positive- and negative-pair similarities over
/// [-1, 1] and their min-integral overlap.
#[derive(Debug, Clone)]
pub struct OverlapReport {
    pub pos_hist: Vec<f64>,
    pub neg_hist: Vec<f64>,
    pub bin_width: f64,
    pub overlap: f64,
}

/// Histogram overlap of two similarity samples. Each histogram is a density
/// over [-1, 1] (integrates to 1); overlap = sum of min(p, n) * bin_width.
/// Samples outside [-1, 1] are clamped into the boundary bins.
pub fn similarity_overlap(
    positives: &[f64],
    negatives: &[f64],
    bins: usize,
) -> Result<OverlapReport, EvalError> {
    if bins < 10 {
        return Err(EvalError::BadBins(bins));
    }
    if positives.is_empty() {
        return Err(EvalError::NoSamples("positive"));
    }
    if negatives.is_empty() {
        return Err(EvalError::NoSamples("negative"));
    }
    let bin_width = 2.0 / bins as f64;
    let hist = |samples: &[f64]| -> Vec<f64> {
        let mut h = vec![0.0; bins];
        for &s in samples {
            let pos = ((s + 1.0) / bin_width).floor();
            let b = (pos.max(0.0) as usize).min(bins - 1);
            h[b] += 1.0;
        }
        let n = samples.len() as f64;
        for v in &mut h {
            *v /= n * bin_width;
        }
        h
    };
    let pos_hist = hist(positives);
    let neg_hist = hist(negatives);
    let overlap = pos_hist
        .iter()
        .zip(neg_hist.iter())
        .map(|(p, n)| p.min(*n) * bin_width)
        .sum();
    Ok(OverlapReport {
        pos_hist,
        neg_hist,
        bin_width,
        overlap,
    })
}

/// Positive-pair similarities (query vs each relevant gallery item) and a
/// size-matched uniform sample of non-matching pair similarities.
pub fn similarity_samples(
    queries: &[Embedding],
    gallery: &[Embedding],
    relevance: &RelevanceTable,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    for q in queries {
        if let Some(rel) = relevance.relevant(&q.id) {
            for g in gallery {
                if rel.contains(&g.id) {
                    pos.push(dot(&q.vector, &g.vector));
                }
            }
        }
    }
    let mut neg = Vec::new();
    if !queries.is_empty() && !gallery.is_empty() {
        let mut guard = 0usize;
        while neg.len() < pos.len() && guard < 100 * (pos.len() + 1) {
            guard += 1;
            let q = &queries[rng.gen_range(0..queries.len())];
            let g = &gallery[rng.gen_range(0..gallery.len())];
            let matching = relevance
                .relevant(&q.id)
                .is_some_and(|r| r.contains(&g.id));
            if !matching {
                neg.push(dot(&q.vector, &g.vector));
            }
        }
    }
    (pos, neg)
}

/// One structured line per metrics run, matching the benchmark table column
/// set (direction, R@1, R@5, R@10, AP, overlap).
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub direction: Direction,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub mean_ap: f64,
    pub overlap: f64,
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "direction={} r1={:.4} r5={:.4} r10={:.4} ap={:.4} overlap={:.4}",
            self.direction, self.r1, self.r5, self.r10, self.mean_ap, self.overlap
        )
    }
}

/// Rank, score, and summarize one retrieval direction.
pub fn evaluate_retrieval(
    queries: &[Embedding],
    gallery: &[Embedding],
    relevance: &RelevanceTable,
    bins: usize,
    rng: &mut ChaCha8Rng,
) -> Result<MetricsReport, EvalError> {
    let result = rank_gallery(queries, gallery)?;
    let r1 = recall_at_k(&result, relevance, 1)?;
    let r5 = recall_at_k(&result, relevance, 5)?;
    let r10 = recall_at_k(&result, relevance, 10)?;
    let ap = average_precision(&result, relevance);
    let (pos, neg) = similarity_samples(queries, gallery, relevance, rng);
    let overlap = if pos.is_empty() || neg.is_empty() {
        f64::NAN
    } else {
        similarity_overlap(&pos, &neg, bins)?.overlap
    };
    Ok(MetricsReport {
        direction: result.direction,
        r1,
        r5,
        r10,
        mean_ap: ap.mean,
        overlap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::View;
    use crate::rng::component_rng;

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = crate::cluster::l2(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    fn emb(id: &str, view: View, v: Vec<f64>) -> Embedding {
        Embedding::new(id, view, unit(v)).unwrap()
    }

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        unit((0..dim).map(|_| rng.gen_range(-1.0..1.0f64)).collect())
    }

    #[test]
    fn identical_vector_ranks_first() {
        let q = vec![emb("q0", View::Drone, vec![1.0, 0.0, 0.0])];
        let gallery = vec![
            emb("g0", View::Satellite, vec![0.0, 1.0, 0.0]),
            emb("g1", View::Satellite, vec![1.0, 0.0, 0.0]),
            emb("g2", View::Satellite, vec![0.0, 0.0, 1.0]),
        ];
        let r = rank_gallery(&q, &gallery).unwrap();
        assert_eq!(r.direction, Direction::DroneToSatellite);
        assert_eq!(r.queries[0].ranking[0].0, "g1");
    }

    #[test]
    fn equal_similarities_rank_in_gallery_id_order() {
        let q = vec![emb("q0", View::Satellite, vec![1.0, 0.0])];
        let gallery = vec![
            emb("g2", View::Drone, vec![0.0, 1.0]),
            emb("g0", View::Drone, vec![0.0, 1.0]),
            emb("g1", View::Drone, vec![0.0, 1.0]),
        ];
        let r = rank_gallery(&q, &gallery).unwrap();
        let ids: Vec<&str> = r.queries[0].ranking.iter().map(|(g, _)| g.as_str()).collect();
        assert_eq!(ids, ["g0", "g1", "g2"]);
        assert_eq!(r.direction, Direction::SatelliteToDrone);
    }

    #[test]
    fn ranking_matches_naive_sort_oracle() {
        let mut rng = component_rng(211, "rank");
        let queries: Vec<Embedding> = (0..10)
            .map(|i| emb(&format!("q{i:02}"), View::Drone, random_unit(&mut rng, 8)))
            .collect();
        let gallery: Vec<Embedding> = (0..20)
            .map(|i| emb(&format!("g{i:02}"), View::Satellite, random_unit(&mut rng, 8)))
            .collect();
        let r = rank_gallery(&queries, &gallery).unwrap();
        for (qi, q) in queries.iter().enumerate() {
            // oracle: insertion sort on independently computed scores
            let mut pairs: Vec<(String, f64)> = gallery
                .iter()
                .map(|g| (g.id.clone(), dot(&q.vector, &g.vector)))
                .collect();
            for i in 1..pairs.len() {
                let mut j = i;
                while j > 0
                    && (pairs[j].1 > pairs[j - 1].1
                        || (pairs[j].1 == pairs[j - 1].1 && pairs[j].0 < pairs[j - 1].0))
                {
                    pairs.swap(j, j - 1);
                    j -= 1;
                }
            }
            let got: Vec<&str> = r.queries[qi].ranking.iter().map(|(g, _)| g.as_str()).collect();
            let want: Vec<&str> = pairs.iter().map(|(g, _)| g.as_str()).collect();
            assert_eq!(got, want);
            // scores must be non-increasing
            for w in r.queries[qi].ranking.windows(2) {
                assert!(w[0].1 >= w[1].1);
            }
        }
    }

    #[test]
    fn empty_gallery_is_an_error() {
        let q = vec![emb("q0", View::Drone, vec![1.0, 0.0])];
        assert!(matches!(rank_gallery(&q, &[]), Err(EvalError::EmptyGallery)));
    }

    #[test]
    fn same_views_are_rejected() {
        let q = vec![emb("q0", View::Drone, vec![1.0, 0.0])];
        let g = vec![emb("g0", View::Drone, vec![1.0, 0.0])];
        assert!(matches!(rank_gallery(&q, &g), Err(EvalError::ViewsMustDiffer)));
    }

    fn toy_result(rankings: &[(&str, &[&str])]) -> RetrievalResult {
        RetrievalResult {
            direction: Direction::DroneToSatellite,
            queries: rankings
                .iter()
                .map(|(qid, gids)| RankedQuery {
                    query_id: qid.to_string(),
                    ranking: gids
                        .iter()
                        .enumerate()
                        .map(|(i, g)| (g.to_string(), 1.0 - i as f64 * 0.01))
                        .collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn recall_basics() {
        let result = toy_result(&[
            ("q0", &["a", "b", "c", "d", "e"]),
            ("q1", &["a", "b", "c", "d", "e"]),
        ]);
        let mut rel = RelevanceTable::default();
        rel.insert("q0", "a");
        rel.insert("q1", "d"); // rank 4
        assert_eq!(recall_at_k(&result, &rel, 1).unwrap(), 0.5);
        assert_eq!(recall_at_k(&result, &rel, 5).unwrap(), 1.0);
        assert!(matches!(
            recall_at_k(&result, &rel, 0),
            Err(EvalError::BadK(0))
        ));
    }

    #[test]
    fn recall_matches_enumeration_oracle() {
        let mut rng = component_rng(223, "recall");
        for _ in 0..50 {
            let n_gallery = rng.gen_range(3..12);
            let n_queries = rng.gen_range(1..10);
            let gids: Vec<String> = (0..n_gallery).map(|i| format!("g{i}")).collect();
            let mut rel = RelevanceTable::default();
            let mut result = RetrievalResult {
                direction: Direction::DroneToSatellite,
                queries: Vec::new(),
            };
            let mut oracle_hits = Vec::new();
            let k = rng.gen_range(1..=n_gallery);
            for qi in 0..n_queries {
                let mut order = gids.clone();
                for i in (1..order.len()).rev() {
                    order.swap(i, rng.gen_range(0..=i));
                }
                let relevant_count = rng.gen_range(1..=2.min(n_gallery));
                let mut relevant = BTreeSet::new();
                while relevant.len() < relevant_count {
                    relevant.insert(order[rng.gen_range(0..order.len())].clone());
                }
                for r in &relevant {
                    rel.insert(&format!("q{qi}"), r);
                }
                // oracle: explicit position scan
                let hit = order.iter().take(k).any(|g| relevant.contains(g));
                oracle_hits.push(hit);
                result.queries.push(RankedQuery {
                    query_id: format!("q{qi}"),
                    ranking: order
                        .into_iter()
                        .enumerate()
                        .map(|(i, g)| (g, -(i as f64)))
                        .collect(),
                });
            }
            let want = oracle_hits.iter().filter(|h| **h).count() as f64 / n_queries as f64;
            let got = recall_at_k(&result, &rel, k).unwrap();
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn ap_analytic_cases() {
        // single relevant at rank 3 -> 1/3
        let result = toy_result(&[("q0", &["a", "b", "c", "d"])]);
        let mut rel = RelevanceTable::default();
        rel.insert("q0", "c");
        let ap = average_precision(&result, &rel);
        assert!((ap.mean - 1.0 / 3.0).abs() < 1e-12);

        // all relevant ranked first -> 1.0
        let mut rel2 = RelevanceTable::default();
        rel2.insert("q0", "a");
        rel2.insert("q0", "b");
        let ap2 = average_precision(&result, &rel2);
        assert!((ap2.mean - 1.0).abs() < 1e-12);

        // relevant at ranks 1 and 3 -> (1 + 2/3)/2
        let mut rel3 = RelevanceTable::default();
        rel3.insert("q0", "a");
        rel3.insert("q0", "c");
        let ap3 = average_precision(&result, &rel3);
        assert!((ap3.mean - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12, "{}", ap3.mean);
    }

    #[test]
    fn ap_excludes_queries_without_relevance() {
        let result = toy_result(&[("q0", &["a", "b"]), ("q1", &["a", "b"])]);
        let mut rel = RelevanceTable::default();
        rel.insert("q0", "b");
        let ap = average_precision(&result, &rel);
        assert_eq!(ap.excluded, 1);
        assert_eq!(ap.per_query.len(), 1);
        assert!((ap.mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ap_matches_enumeration_oracle_on_random_instances() {
        let mut rng = component_rng(227, "ap");
        for _ in 0..50 {
            let n = rng.gen_range(2..12);
            let order: Vec<String> = (0..n).map(|i| format!("g{i}")).collect();
            let mut shuffled = order.clone();
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.gen_range(0..=i));
            }
            let relevant_count = rng.gen_range(1..=n);
            let relevant: BTreeSet<String> =
                shuffled.iter().take(relevant_count).cloned().collect();
            let mut by_rank = order.clone();
            for i in (1..by_rank.len()).rev() {
                by_rank.swap(i, rng.gen_range(0..=i));
            }
            // oracle: for each relevant item, precision at its rank computed
            // by counting relevant items no deeper than it
            let mut oracle = 0.0;
            for (rank0, g) in by_rank.iter().enumerate() {
                if relevant.contains(g) {
                    let upto = by_rank[..=rank0]
                        .iter()
                        .filter(|x| relevant.contains(*x))
                        .count();
                    oracle += upto as f64 / (rank0 + 1) as f64;
                }
            }
            oracle /= relevant.len() as f64;

            let result = RetrievalResult {
                direction: Direction::DroneToSatellite,
                queries: vec![RankedQuery {
                    query_id: "q".into(),
                    ranking: by_rank
                        .into_iter()
                        .enumerate()
                        .map(|(i, g)| (g, -(i as f64)))
                        .collect(),
                }],
            };
            let mut rel = RelevanceTable::default();
            for r in &relevant {
                rel.insert("q", r);
            }
            let ap = average_precision(&result, &rel);
            assert!((ap.mean - oracle).abs() < 1e-12);
            assert!(ap.mean > 0.0 && ap.mean <= 1.0);
        }
    }

    #[test]
    fn recall_is_monotone_in_k() {
        let mut rng = component_rng(229, "mono");
        let queries: Vec<Embedding> = (0..6)
            .map(|i| emb(&format!("q{i}"), View::Drone, random_unit(&mut rng, 4)))
            .collect();
        let gallery: Vec<Embedding> = (0..9)
            .map(|i| emb(&format!("g{i}"), View::Satellite, random_unit(&mut rng, 4)))
            .collect();
        let mut rel = RelevanceTable::default();
        for (i, q) in queries.iter().enumerate() {
            rel.insert(&q.id, &format!("g{}", i % 9));
        }
        let r = rank_gallery(&queries, &gallery).unwrap();
        let mut last = 0.0;
        for k in 1..=9 {
            let v = recall_at_k(&r, &rel, k).unwrap();
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn overlap_disjoint_and_identical() {
        let pos = vec![1.0; 40];
        let neg = vec![-1.0; 40];
        let r = similarity_overlap(&pos, &neg, 100).unwrap();
        assert_eq!(r.overlap, 0.0);

        let mut rng = component_rng(233, "ovl");
        let same: Vec<f64> = (0..500).map(|_| rng.gen_range(-0.9..0.9)).collect();
        let r2 = similarity_overlap(&same, &same, 100).unwrap();
        assert!((r2.overlap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_is_symmetric_and_bounded() {
        let mut rng = component_rng(239, "ovl2");
        let a: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..0.5)).collect();
        let b: Vec<f64> = (0..200).map(|_| rng.gen_range(-0.5..1.0)).collect();
        let r1 = similarity_overlap(&a, &b, 50).unwrap();
        let r2 = similarity_overlap(&b, &a, 50).unwrap();
        assert!((r1.overlap - r2.overlap).abs() < 1e-12);
        assert!(r1.overlap >= 0.0 && r1.overlap <= 1.0 + 1e-12);
        assert!(matches!(
            similarity_overlap(&a, &b, 9),
            Err(EvalError::BadBins(9))
        ));
    }

    #[test]
    fn overlap_matches_numeric_integration_for_gaussians() {
        // Two Gaussians inside [-1,1]; histogram overlap of 10^4 samples per
        // side must match the min-integral of the true densities within 0.02.
        let mut rng = component_rng(241, "gauss");
        let (mu1, mu2, sd) = (-0.35, 0.35, 0.18);
        let sample = |rng: &mut ChaCha8Rng, mu: f64| -> f64 {
            // Box-Muller
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            mu + sd * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let pos: Vec<f64> = (0..10_000).map(|_| sample(&mut rng, mu1)).collect();
        let neg: Vec<f64> = (0..10_000).map(|_| sample(&mut rng, mu2)).collect();
        let got = similarity_overlap(&pos, &neg, 100).unwrap().overlap;

        // oracle: trapezoid integration of min(pdf1, pdf2) over [-1, 1]
        let pdf = |x: f64, mu: f64| {
            (-0.5 * ((x - mu) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
        };
        let steps = 20_000;
        let h = 2.0 / steps as f64;
        let mut integral = 0.0;
        for i in 0..=steps {
            let x = -1.0 + i as f64 * h;
            let v = pdf(x, mu1).min(pdf(x, mu2));
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            integral += v * w * h;
        }
        assert!(
            (got - integral).abs() < 0.02,
            "histogram {got} vs integral {integral}"
        );
    }
}
