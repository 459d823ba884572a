//! Unsupervised re-ranking of an initial Euclidean ranking.
//!
//! The idea: two images probably share an identity when each ranks inside the
//! other's top-k list. Every entry (queries and gallery alike) is encoded as
//! a sparse feature over its mutual-neighbor set, those features are softened
//! by averaging over each entry's closest neighbors, and the final ranking
//! blends the original Euclidean distance with the Jaccard distance between
//! features. No identity or camera labels are consumed anywhere.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::descriptor::{euclidean, DescriptorSet};
use crate::error::{Error, Result};

/// Tuning knobs for the re-ranking pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReRankConfig {
    /// Mutual-neighbor list size used to build the sparse features.
    pub k1: usize,
    /// Averaging neighborhood for feature softening; 1 disables it.
    pub k2: usize,
    /// Blend weight: 1 keeps the Euclidean ranking, 0 uses Jaccard only.
    pub lambda: f64,
}

impl Default for ReRankConfig {
    fn default() -> Self {
        ReRankConfig {
            k1: 20,
            k2: 6,
            lambda: 0.3,
        }
    }
}

impl ReRankConfig {
    /// The default configuration clamped down for small galleries.
    pub fn default_for(gallery_len: usize) -> Self {
        let k1 = (gallery_len / 3).clamp(1, 20);
        ReRankConfig {
            k1,
            k2: k1.min(6),
            lambda: 0.3,
        }
    }

    pub fn validate(&self, gallery_len: usize) -> Result<()> {
        if self.k2 < 1 || self.k2 > self.k1 {
            return Err(Error::contract(format!(
                "k2 = {} must satisfy 1 <= k2 <= k1 = {}",
                self.k2, self.k1
            )));
        }
        if self.k1 >= gallery_len {
            return Err(Error::contract(format!(
                "k1 = {} must be smaller than the gallery ({} entries)",
                self.k1, gallery_len
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::contract(format!(
                "lambda = {} is outside [0, 1]",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Sparse nonnegative feature over the joint query+gallery index space.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReciprocalFeature {
    pub entries: BTreeMap<usize, f64>,
}

/// The `k` nearest entries to `i`, self excluded, ties broken by index.
pub fn knn(dist: &[Vec<f64>], i: usize, k: usize) -> Result<Vec<usize>> {
    let n = dist.len();
    assert!(i < n, "entry {i} outside a {n}-point distance matrix");
    if k >= n {
        return Err(Error::contract(format!(
            "k = {k} must be smaller than the number of entries ({n})"
        )));
    }
    let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    order.sort_by(|&a, &b| dist[i][a].total_cmp(&dist[i][b]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

/// Entries that appear in `i`'s top-k while `i` appears in theirs.
pub fn mutual_neighbors(dist: &[Vec<f64>], i: usize, k: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for j in knn(dist, i, k)? {
        if knn(dist, j, k)?.contains(&i) {
            out.push(j);
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Mutual-neighbor set of `i`, expanded by the half-k rule: the mutual set of
/// each member at `k/2` is merged in when at least two thirds of it already
/// overlaps the original set.
pub fn k_reciprocal_neighbors(dist: &[Vec<f64>], i: usize, k: usize) -> Result<Vec<usize>> {
    let core: BTreeSet<usize> = mutual_neighbors(dist, i, k)?.into_iter().collect();
    let mut expanded = core.clone();
    for &j in &core {
        let half = mutual_neighbors(dist, j, k / 2)?;
        let overlap = half.iter().filter(|m| core.contains(m)).count();
        if 3 * overlap >= 2 * half.len() {
            expanded.extend(half);
        }
    }
    Ok(expanded.into_iter().collect())
}

/// Gaussian-weighted indicator over the expanded mutual-neighbor set,
/// normalized to sum 1, then softened by averaging the features of `i` and
/// its `k2 - 1` nearest entries.
pub fn encode_reciprocal_feature(
    dist: &[Vec<f64>],
    i: usize,
    config: &ReRankConfig,
) -> Result<ReciprocalFeature> {
    let features = encode_all(dist, config)?;
    Ok(features.into_iter().nth(i).unwrap())
}

fn base_feature(dist: &[Vec<f64>], i: usize, k1: usize) -> Result<ReciprocalFeature> {
    let support = k_reciprocal_neighbors(dist, i, k1)?;
    let mut entries = BTreeMap::new();
    let total: f64 = support.iter().map(|&j| (-dist[i][j]).exp()).sum();
    if total > 0.0 {
        for &j in &support {
            entries.insert(j, (-dist[i][j]).exp() / total);
        }
    }
    Ok(ReciprocalFeature { entries })
}

/// Features for every entry of the distance matrix, softening included.
pub fn encode_all(dist: &[Vec<f64>], config: &ReRankConfig) -> Result<Vec<ReciprocalFeature>> {
    let n = dist.len();
    let base: Vec<ReciprocalFeature> = (0..n)
        .map(|i| base_feature(dist, i, config.k1))
        .collect::<Result<_>>()?;
    if config.k2 == 1 {
        return Ok(base);
    }
    let mut softened = Vec::with_capacity(n);
    for i in 0..n {
        let mut group = vec![i];
        group.extend(knn(dist, i, config.k2 - 1)?);
        let mut entries: BTreeMap<usize, f64> = BTreeMap::new();
        for &member in &group {
            for (&j, &w) in &base[member].entries {
                *entries.entry(j).or_insert(0.0) += w;
            }
        }
        let scale = 1.0 / group.len() as f64;
        for w in entries.values_mut() {
            *w *= scale;
        }
        softened.push(ReciprocalFeature { entries });
    }
    Ok(softened)
}

/// Fuzzy-set Jaccard distance: `1 - sum(min) / sum(max)` over the union of
/// supports. Two empty features are maximally distant by convention.
pub fn jaccard_distance(a: &ReciprocalFeature, b: &ReciprocalFeature) -> f64 {
    if a.entries.is_empty() && b.entries.is_empty() {
        return 1.0;
    }
    // Walk the union in key order so the summation order, and therefore the
    // rounding, is identical no matter which argument comes first.
    let keys: BTreeSet<usize> = a.entries.keys().chain(b.entries.keys()).copied().collect();
    let mut sum_min = 0.0;
    let mut sum_max = 0.0;
    for j in keys {
        let wa = a.entries.get(&j).copied().unwrap_or(0.0);
        let wb = b.entries.get(&j).copied().unwrap_or(0.0);
        sum_min += wa.min(wb);
        sum_max += wa.max(wb);
    }
    if sum_max == 0.0 {
        return 1.0;
    }
    1.0 - sum_min / sum_max
}

/// Linear blend of the original and Jaccard distances.
pub fn aggregate_distance(d_original: f64, d_jaccard: f64, lambda: f64) -> f64 {
    lambda * d_original + (1.0 - lambda) * d_jaccard
}

/// Re-ranks the gallery for every query.
///
/// Returns, per query, `(gallery index, aggregated distance)` in ascending
/// order with ties broken by gallery key. The joint index space used for the
/// neighbor analysis lists queries first, then the gallery.
pub fn rerank(
    queries: &DescriptorSet,
    gallery: &DescriptorSet,
    config: &ReRankConfig,
) -> Result<Vec<Vec<(usize, f64)>>> {
    if queries.dim != gallery.dim {
        return Err(Error::dimension(format!(
            "query descriptors have dimension {} but the gallery has {}",
            queries.dim, gallery.dim
        )));
    }
    if queries.is_empty() {
        return Err(Error::contract("no query descriptors to re-rank"));
    }
    config.validate(gallery.len())?;

    let q = queries.len();
    let all: Vec<&[f32]> = queries
        .records
        .iter()
        .chain(&gallery.records)
        .map(|r| r.values.as_slice())
        .collect();
    let n = all.len();
    let mut dist = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean(all[i], all[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }

    let features = encode_all(&dist, config)?;
    let mut rankings = Vec::with_capacity(q);
    for i in 0..q {
        let mut order: Vec<(usize, f64)> = (0..gallery.len())
            .map(|j| {
                let blended = aggregate_distance(
                    dist[i][q + j],
                    jaccard_distance(&features[i], &features[q + j]),
                    config.lambda,
                );
                (j, blended)
            })
            .collect();
        order.sort_by(|(a, da), (b, db)| {
            da.total_cmp(db)
                .then_with(|| gallery.records[*a].key.cmp(&gallery.records[*b].key))
        });
        rankings.push(order);
    }
    Ok(rankings)
}

/// Writes rankings as `query_key TAB gallery_key TAB distance` lines.
pub fn write_ranking_lines(
    out: &mut dyn Write,
    queries: &DescriptorSet,
    gallery: &DescriptorSet,
    rankings: &[Vec<(usize, f64)>],
) -> std::io::Result<()> {
    for (query, order) in queries.records.iter().zip(rankings) {
        for &(j, d) in order {
            writeln!(out, "{}\t{}\t{:.6}", query.key, gallery.records[j].key, d)?;
        }
    }
    Ok(())
}
