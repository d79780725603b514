//! Feature kinds and the time × bins matrix every encoder consumes.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// The four input features. The declaration order is the global
/// serialization order used by fused embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureKind {
    /// Dominant melody.
    Me,
    /// Harmonic (chroma) structure.
    Ha,
    /// Constant-Q fluctuation patterns.
    Rh,
    /// Lyrics posteriorgram.
    Ly,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] = [FeatureKind::Me, FeatureKind::Ha, FeatureKind::Rh, FeatureKind::Ly];

    /// Position in the fixed serialization order, also the on-disk tag.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Me => "me",
            FeatureKind::Ha => "ha",
            FeatureKind::Rh => "rh",
            FeatureKind::Ly => "ly",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FeatureKind::Me => "Me",
            FeatureKind::Ha => "Ha",
            FeatureKind::Rh => "Rh",
            FeatureKind::Ly => "Ly",
        };
        f.write_str(s)
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "me" => Ok(FeatureKind::Me),
            "ha" => Ok(FeatureKind::Ha),
            "rh" => Ok(FeatureKind::Rh),
            "ly" => Ok(FeatureKind::Ly),
            _ => Err(Error::UnknownFeature(s.to_string())),
        }
    }
}

/// Parse a comma separated list such as `me,ha,ly` into a sorted, deduplicated set.
pub fn parse_feature_list(s: &str) -> Result<FeatureSet> {
    let mut set = FeatureSet::empty();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        set.insert(part.parse()?);
    }
    Ok(set)
}

/// A subset of the four features, stored as a bitmask (bit i = `FeatureKind::ALL[i]`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FeatureSet(u8);

impl FeatureSet {
    pub fn empty() -> Self {
        FeatureSet(0)
    }

    pub fn all() -> Self {
        FeatureSet(0b1111)
    }

    pub fn from_bits(bits: u8) -> Self {
        FeatureSet(bits & 0b1111)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn insert(&mut self, kind: FeatureKind) {
        self.0 |= 1 << kind.index();
    }

    pub fn contains(self, kind: FeatureKind) -> bool {
        self.0 & (1 << kind.index()) != 0
    }

    pub fn intersect(self, other: FeatureSet) -> FeatureSet {
        FeatureSet(self.0 & other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Members in serialization order.
    pub fn iter(self) -> impl Iterator<Item = FeatureKind> {
        FeatureKind::ALL.into_iter().filter(move |k| self.contains(*k))
    }

    /// All 15 nonempty subsets.
    pub fn nonempty_subsets() -> impl Iterator<Item = FeatureSet> {
        (1u8..16).map(FeatureSet)
    }
}

impl FromIterator<FeatureKind> for FeatureSet {
    fn from_iter<I: IntoIterator<Item = FeatureKind>>(iter: I) -> Self {
        let mut s = FeatureSet::empty();
        for k in iter {
            s.insert(k);
        }
        s
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.iter().map(|k| k.to_string()).collect();
        f.write_str(&names.join("+"))
    }
}

/// Row-major time × bins matrix tagged with its feature kind.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub kind: FeatureKind,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(kind: FeatureKind, rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} feature needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(FeatureMatrix {
            kind,
            rows,
            cols,
            values,
        })
    }

    pub fn zeros(kind: FeatureKind, rows: usize, cols: usize) -> Self {
        FeatureMatrix {
            kind,
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }
}
