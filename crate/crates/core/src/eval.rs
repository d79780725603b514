//! Retrieval evaluation: distance matrices, MAP / MT@10 / MR1, optimal
//! bounds, the oracle combiner and per-feature contribution shares.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature::{FeatureKind, FeatureSet};
use crate::fusion::{fused_distance_available, quadratic_mean, FusedEmbedding, NO_COMMON_FEATURE_DISTANCE};

/// Work id of every track, as dense indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliqueLabels {
    work_of: Vec<u32>,
    sizes: Vec<usize>,
}

impl CliqueLabels {
    pub fn new(work_of: Vec<u32>) -> Self {
        let n_works = work_of.iter().map(|&w| w as usize + 1).max().unwrap_or(0);
        let mut sizes = vec![0; n_works];
        for &w in &work_of {
            sizes[w as usize] += 1;
        }
        CliqueLabels { work_of, sizes }
    }

    /// Dense labels numbered in order of first appearance.
    pub fn from_ids<S: AsRef<str>>(ids: &[S]) -> Self {
        let mut map: HashMap<&str, u32> = HashMap::new();
        let work_of = ids
            .iter()
            .map(|s| {
                let n = map.len() as u32;
                *map.entry(s.as_ref()).or_insert(n)
            })
            .collect();
        Self::new(work_of)
    }

    pub fn len(&self) -> usize {
        self.work_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.work_of.is_empty()
    }

    pub fn work(&self, track: usize) -> u32 {
        self.work_of[track]
    }

    pub fn works(&self) -> &[u32] {
        &self.work_of
    }

    pub fn clique_size(&self, track: usize) -> usize {
        self.sizes[self.work_of[track] as usize]
    }

    pub fn same_work(&self, a: usize, b: usize) -> bool {
        self.work_of[a] == self.work_of[b]
    }

    /// Tracks with at least one other version.
    pub fn queries(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.clique_size(i) >= 2).collect()
    }
}

/// Dense symmetric `n × n` matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let mut values = vec![0.0; n * n];
        values.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = match i.cmp(&j) {
                    std::cmp::Ordering::Less => f(i, j),
                    std::cmp::Ordering::Equal => 0.0,
                    std::cmp::Ordering::Greater => f(j, i),
                };
            }
        });
        DistanceMatrix { n, values }
    }

    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Shape(format!("{} values for a {n}x{n} matrix", values.len())));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::InvalidArgument(format!("nonzero diagonal at {i}")));
            }
            for j in i + 1..n {
                let (a, b) = (values[i * n + j], values[j * n + i]);
                if !(a >= 0.0) || (a - b).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!("entry ({i},{j}) is negative or asymmetric")));
                }
            }
        }
        Ok(DistanceMatrix { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Apply `f` to every off-diagonal entry.
    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> DistanceMatrix {
        DistanceMatrix::from_fn(self.n, |i, j| f(self.get(i, j)))
    }
}

const BLOCK: usize = 64;

/// Euclidean distances between all vectors, clamped to `[0, 2]`.
///
/// Rows are processed in parallel blocks of 64 against column blocks of 64.
/// Each entry is `sqrt(Σ (a_k - b_k)²)` summed in index order, so results do
/// not depend on the blocking.
pub fn pairwise_distances(vectors: &[Vec<f64>]) -> Result<DistanceMatrix> {
    let n = vectors.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no embeddings to compare".into()));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::Shape("embeddings differ in length".into()));
    }
    let mut values = vec![0.0; n * n];
    values.par_chunks_mut(BLOCK * n).enumerate().for_each(|(bi, rows)| {
        let r0 = bi * BLOCK;
        for c0 in (0..n).step_by(BLOCK) {
            for (ri, row) in rows.chunks_mut(n).enumerate() {
                let a = &vectors[r0 + ri];
                for j in c0..(c0 + BLOCK).min(n) {
                    if j == r0 + ri {
                        continue;
                    }
                    let b = &vectors[j];
                    let mut s = 0.0;
                    for k in 0..dim {
                        let d = a[k] - b[k];
                        s += d * d;
                    }
                    row[j] = s.sqrt().min(2.0);
                }
            }
        }
    });
    Ok(DistanceMatrix { n, values })
}

/// Fused distances over `mask`; each pair uses the features both tracks have.
pub fn pairwise_fused_distances(embeddings: &[FusedEmbedding], mask: FeatureSet) -> Result<DistanceMatrix> {
    if embeddings.is_empty() {
        return Err(Error::InvalidArgument("no embeddings to compare".into()));
    }
    if mask.is_empty() {
        return Err(Error::InvalidArgument("empty feature mask".into()));
    }
    Ok(DistanceMatrix::from_fn(embeddings.len(), |i, j| {
        fused_distance_available(&embeddings[i], &embeddings[j], mask).min(2.0)
    }))
}

/// Quadratic mean of aligned per-feature matrices, entry by entry.
pub fn fuse_matrices(matrices: &[&DistanceMatrix]) -> Result<DistanceMatrix> {
    check_same_shape(matrices, 1)?;
    let n = matrices[0].n;
    Ok(DistanceMatrix::from_fn(n, |i, j| {
        let d: Vec<f64> = matrices.iter().map(|m| m.get(i, j)).collect();
        quadratic_mean(&d)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub map: f64,
    pub mt10: f64,
    pub mr1: f64,
    pub n_queries: usize,
}

/// Mean of `hits_so_far / rank` over relevant positions of a ranked list.
pub fn average_precision(sorted_relevance: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &r) in sorted_relevance.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::InvalidArgument("average precision needs a relevant item".into()));
    }
    Ok(sum / hits as f64)
}

struct QueryScore {
    ap: f64,
    top10: usize,
    first: usize,
}

/// Ranks of the query's versions, ascending. Item `k` precedes `j` when
/// `(d_k, k) < (d_j, j)`.
fn version_ranks(dist: &DistanceMatrix, labels: &CliqueLabels, q: usize) -> Vec<usize> {
    let row = dist.row(q);
    let mut ranks: Vec<usize> = (0..dist.n)
        .filter(|&j| j != q && labels.same_work(q, j))
        .map(|j| {
            let dj = row[j];
            1 + (0..dist.n)
                .filter(|&k| k != q && k != j && (row[k] < dj || (row[k] == dj && k < j)))
                .count()
        })
        .collect();
    ranks.sort_unstable();
    ranks
}

fn score_query(dist: &DistanceMatrix, labels: &CliqueLabels, q: usize) -> QueryScore {
    let ranks = version_ranks(dist, labels, q);
    let mut sum = 0.0;
    for (h, &r) in ranks.iter().enumerate() {
        sum += (h + 1) as f64 / r as f64;
    }
    QueryScore {
        ap: sum / ranks.len() as f64,
        top10: ranks.iter().filter(|&&r| r <= 10).count(),
        first: ranks[0],
    }
}

/// MAP, MT@10 and MR1 over every track that has at least one version.
pub fn evaluate(dist: &DistanceMatrix, labels: &CliqueLabels) -> Result<EvalReport> {
    if dist.n != labels.len() {
        return Err(Error::Shape(format!("{} labels for a {}-track matrix", labels.len(), dist.n)));
    }
    let queries = labels.queries();
    if queries.is_empty() {
        return Err(Error::NoQueries);
    }
    let scores: Vec<QueryScore> = queries.par_iter().map(|&q| score_query(dist, labels, q)).collect();
    let nq = scores.len() as f64;
    let (mut ap, mut t10, mut r1) = (0.0, 0.0, 0.0);
    for s in &scores {
        ap += s.ap;
        t10 += s.top10 as f64;
        r1 += s.first as f64;
    }
    Ok(EvalReport {
        map: ap / nq,
        mt10: t10 / nq,
        mr1: r1 / nq,
        n_queries: scores.len(),
    })
}

/// Best achievable scores for the clique structure.
pub fn optimal_metrics(labels: &CliqueLabels) -> Result<EvalReport> {
    let queries = labels.queries();
    if queries.is_empty() {
        return Err(Error::NoQueries);
    }
    let t10: usize = queries.iter().map(|&q| (labels.clique_size(q) - 1).min(10)).sum();
    Ok(EvalReport {
        map: 1.0,
        mt10: t10 as f64 / queries.len() as f64,
        mr1: 1.0,
        n_queries: queries.len(),
    })
}

fn check_same_shape(matrices: &[&DistanceMatrix], min: usize) -> Result<()> {
    if matrices.len() < min {
        return Err(Error::InvalidArgument(format!("need at least {min} feature matrices")));
    }
    let n = matrices[0].n;
    if matrices.iter().any(|m| m.n != n) {
        return Err(Error::Shape("feature matrices differ in size".into()));
    }
    Ok(())
}

/// Per pair: the smallest feature distance for versions, the largest for
/// non-versions.
pub fn oracle_distances(feature_dists: &[&DistanceMatrix], labels: &CliqueLabels) -> Result<DistanceMatrix> {
    check_same_shape(feature_dists, 2)?;
    if labels.len() != feature_dists[0].n {
        return Err(Error::Shape("labels and matrices differ in size".into()));
    }
    Ok(DistanceMatrix::from_fn(labels.len(), |i, j| {
        let it = feature_dists.iter().map(|m| m.get(i, j));
        if labels.same_work(i, j) {
            it.fold(f64::INFINITY, f64::min)
        } else {
            it.fold(f64::NEG_INFINITY, f64::max)
        }
    }))
}

/// Share of pairs for which each feature is the oracle's choice.
#[derive(Debug, Clone, PartialEq)]
pub struct Contributions {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub n_positive_pairs: usize,
    pub n_negative_pairs: usize,
}

impl Contributions {
    /// Mean of the positive-pair and negative-pair shares of each feature.
    pub fn overall(&self) -> Vec<f64> {
        self.positive.iter().zip(&self.negative).map(|(p, n)| 0.5 * (p + n)).collect()
    }
}

/// Over unordered pairs, split each pair's credit equally among the features
/// attaining the oracle value (min for versions, max otherwise).
pub fn oracle_contributions(feature_dists: &[&DistanceMatrix], labels: &CliqueLabels) -> Result<Contributions> {
    check_same_shape(feature_dists, 2)?;
    let n = feature_dists[0].n;
    if labels.len() != n {
        return Err(Error::Shape("labels and matrices differ in size".into()));
    }
    let f = feature_dists.len();
    let mut pos = vec![0.0; f];
    let mut neg = vec![0.0; f];
    let (mut np, mut nn) = (0usize, 0usize);
    let mut d = vec![0.0; f];
    for i in 0..n {
        for j in i + 1..n {
            for (k, m) in feature_dists.iter().enumerate() {
                d[k] = m.get(i, j);
            }
            let same = labels.same_work(i, j);
            let target = if same {
                d.iter().cloned().fold(f64::INFINITY, f64::min)
            } else {
                d.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            };
            let winners = d.iter().filter(|&&v| v == target).count() as f64;
            let acc = if same { &mut pos } else { &mut neg };
            for k in 0..f {
                if d[k] == target {
                    acc[k] += 1.0 / winners;
                }
            }
            if same {
                np += 1;
            } else {
                nn += 1;
            }
        }
    }
    if np > 0 {
        pos.iter_mut().for_each(|v| *v /= np as f64);
    }
    if nn > 0 {
        neg.iter_mut().for_each(|v| *v /= nn as f64);
    }
    Ok(Contributions {
        positive: pos,
        negative: neg,
        n_positive_pairs: np,
        n_negative_pairs: nn,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairReport {
    pub per_feature: Vec<(FeatureKind, f64)>,
    pub fused: Vec<(FeatureSet, f64)>,
}

/// Distances between two tracks under each feature and each mask. Features
/// absent from `feature_dists` drop out of a mask; a mask with none left
/// reports [`NO_COMMON_FEATURE_DISTANCE`].
pub fn pair_report(
    a: usize,
    b: usize,
    feature_dists: &[(FeatureKind, &DistanceMatrix)],
    masks: &[FeatureSet],
) -> Result<PairReport> {
    let n = feature_dists.first().map_or(0, |(_, m)| m.n);
    if feature_dists.iter().any(|(_, m)| m.n != n) {
        return Err(Error::Shape("feature matrices differ in size".into()));
    }
    for t in [a, b] {
        if t >= n {
            return Err(Error::UnknownTrack(t.to_string()));
        }
    }
    let per_feature: Vec<(FeatureKind, f64)> = feature_dists.iter().map(|(k, m)| (*k, m.get(a, b))).collect();
    let fused = masks
        .iter()
        .map(|&mask| {
            let d: Vec<f64> = per_feature.iter().filter(|(k, _)| mask.contains(*k)).map(|(_, d)| *d).collect();
            let v = if d.is_empty() { NO_COMMON_FEATURE_DISTANCE } else { quadratic_mean(&d) };
            (mask, v)
        })
        .collect();
    Ok(PairReport { per_feature, fused })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[true, true]).unwrap(), 1.0);
        assert!((average_precision(&[true, false, true]).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[false, false, false, true]).unwrap(), 0.25);
        assert!(average_precision(&[false]).is_err());
    }

    #[test]
    fn perfect_clique() {
        let labels = CliqueLabels::new(vec![0, 0, 0, 1, 2]);
        let d = DistanceMatrix::from_fn(5, |i, j| if labels.same_work(i, j) { 0.1 } else { 1.5 });
        let r = evaluate(&d, &labels).unwrap();
        assert_eq!((r.map, r.mt10, r.mr1, r.n_queries), (1.0, 2.0, 1.0, 3));
    }

    #[test]
    fn ties_break_by_index() {
        // query 0: track 1 (other work) and track 2 (version) tie
        let labels = CliqueLabels::new(vec![0, 1, 0]);
        let d = DistanceMatrix::from_fn(3, |_, _| 1.0);
        let r = evaluate(&d, &labels).unwrap();
        // query 0 ranks its version second, query 2 first
        assert_eq!(r.mr1, 1.5);
    }

    #[test]
    fn optimal_examples() {
        let l = CliqueLabels::new(vec![0, 0, 1, 1, 1, 2, 2, 2, 2]);
        assert!((optimal_metrics(&l).unwrap().mt10 - 20.0 / 9.0).abs() < 1e-15);
        let l = CliqueLabels::new((0..39).map(|i| i / 13).collect());
        assert_eq!(optimal_metrics(&l).unwrap().mt10, 10.0);
        let l = CliqueLabels::new(vec![0, 0, 1, 1, 2]);
        assert_eq!(optimal_metrics(&l).unwrap().mt10, 1.0);
        assert!(matches!(optimal_metrics(&CliqueLabels::new(vec![0, 1])), Err(Error::NoQueries)));
    }

    #[test]
    fn oracle_rules() {
        let labels = CliqueLabels::new(vec![0, 0, 1]);
        let a = DistanceMatrix::from_fn(3, |_, _| 0.9);
        let b = DistanceMatrix::from_fn(3, |_, _| 0.3);
        let o = oracle_distances(&[&a, &b], &labels).unwrap();
        assert_eq!(o.get(0, 1), 0.3);
        assert_eq!(o.get(0, 2), 0.9);
        let c = oracle_contributions(&[&a, &a], &labels).unwrap();
        assert_eq!(c.positive, vec![0.5, 0.5]);
        assert_eq!(c.negative, vec![0.5, 0.5]);
        assert!(oracle_distances(&[&a], &labels).is_err());
    }

    #[test]
    fn labels_from_ids() {
        let l = CliqueLabels::from_ids(&["x", "y", "x", "z"]);
        assert_eq!(l.works(), &[0, 1, 0, 2]);
        assert_eq!(l.queries(), vec![0, 2]);
    }

    #[test]
    fn pairwise_basics() {
        let v = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]];
        let d = pairwise_distances(&v).unwrap();
        assert_eq!(d.get(0, 1), 0.0);
        assert_eq!(d.get(0, 2), 2.0);
        assert_eq!(d.get(2, 0), 2.0);
        assert!(pairwise_distances(&[]).is_err());
    }
}
