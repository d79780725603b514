//! Late fusion of per-feature embeddings.
//!
//! The distance between masked, concatenated and renormalised embeddings is
//! the quadratic mean of the per-feature distances, so subsets can be scored
//! without building the concatenation.

use crate::encoder::Embedding;
use crate::error::{Error, Result};
use crate::feature::{FeatureKind, FeatureSet};

const PART_NORM_TOL: f64 = 1e-4;

/// Distance reported for a pair that shares no feature under the mask.
pub const NO_COMMON_FEATURE_DISTANCE: f64 = 2.0;

/// Per-feature unit vectors of one track, in the fixed order Me, Ha, Rh, Ly.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FusedEmbedding {
    parts: [Option<Vec<f64>>; 4],
}

fn check_unit(kind: FeatureKind, v: &[f64]) -> Result<()> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (n - 1.0).abs() > PART_NORM_TOL {
        return Err(Error::InvalidArgument(format!("{kind} part has norm {n}, expected 1")));
    }
    Ok(())
}

impl FusedEmbedding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, kind: FeatureKind, values: Vec<f64>) -> Result<()> {
        check_unit(kind, &values)?;
        if let Some(other) = self.parts.iter().flatten().next() {
            if other.len() != values.len() {
                return Err(Error::Shape(format!(
                    "{kind} part has {} dims, others have {}",
                    values.len(),
                    other.len()
                )));
            }
        }
        self.parts[kind.index()] = Some(values);
        Ok(())
    }

    pub fn insert_embedding(&mut self, e: &Embedding) -> Result<()> {
        self.insert(e.kind, e.to_f64())
    }

    pub fn from_embeddings<'a>(parts: impl IntoIterator<Item = &'a Embedding>) -> Result<Self> {
        let mut f = Self::new();
        for e in parts {
            f.insert_embedding(e)?;
        }
        Ok(f)
    }

    pub fn part(&self, kind: FeatureKind) -> Option<&[f64]> {
        self.parts[kind.index()].as_deref()
    }

    pub fn present(&self) -> FeatureSet {
        FeatureKind::ALL.into_iter().filter(|k| self.parts[k.index()].is_some()).collect()
    }

    pub fn dim(&self) -> Option<usize> {
        self.parts.iter().flatten().next().map(Vec::len)
    }

    /// Renormalised concatenation of the parts selected by `mask`.
    pub fn concatenated(&self, mask: FeatureSet) -> Result<Vec<f64>> {
        let parts = mask
            .iter()
            .map(|k| self.part(k).ok_or_else(|| Error::Missing(format!("{k} embedding"))))
            .collect::<Result<Vec<_>>>()?;
        concat_normalize(&parts)
    }
}

/// Concatenate unit vectors and divide by `√n`.
pub fn concat_normalize(parts: &[&[f64]]) -> Result<Vec<f64>> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument("nothing to concatenate".into()));
    }
    for (i, p) in parts.iter().enumerate() {
        let n = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (n - 1.0).abs() > PART_NORM_TOL {
            return Err(Error::InvalidArgument(format!("part {i} has norm {n}, expected 1")));
        }
    }
    let s = 1.0 / (parts.len() as f64).sqrt();
    Ok(parts.iter().flat_map(|p| p.iter().map(|v| v * s)).collect())
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Euclidean distance of every masked feature, in Me, Ha, Rh, Ly order.
pub fn per_feature_distances(a: &FusedEmbedding, b: &FusedEmbedding, mask: FeatureSet) -> Result<Vec<f64>> {
    if mask.is_empty() {
        return Err(Error::InvalidArgument("empty feature mask".into()));
    }
    mask.iter()
        .map(|k| match (a.part(k), b.part(k)) {
            (Some(x), Some(y)) => Ok(euclid(x, y)),
            _ => Err(Error::Missing(format!("{k} embedding"))),
        })
        .collect()
}

/// Quadratic mean of per-feature distances.
pub fn quadratic_mean(d: &[f64]) -> f64 {
    (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt()
}

pub fn fused_distance(a: &FusedEmbedding, b: &FusedEmbedding, mask: FeatureSet) -> Result<f64> {
    per_feature_distances(a, b, mask).map(|d| quadratic_mean(&d))
}

/// Fused distance over the features of `mask` present in both tracks, or
/// [`NO_COMMON_FEATURE_DISTANCE`] if there are none.
pub fn fused_distance_available(a: &FusedEmbedding, b: &FusedEmbedding, mask: FeatureSet) -> f64 {
    let common = mask.intersect(a.present()).intersect(b.present());
    if common.is_empty() {
        return NO_COMMON_FEATURE_DISTANCE;
    }
    fused_distance(a, b, common).expect("common features are present")
}
