//! Monotonic multiple-testing procedures.
//!
//! A procedure maps a vector of p-values to the set of rejected hypotheses.
//! Both procedures here are monotonic: lowering any p-value never shrinks the
//! rejection set. The sequential engine relies on this to sandwich the ideal
//! classification between the procedure applied to upper and lower interval
//! endpoints.
//!
//! Hypothesis indices are 0-based internally; the CLI and file formats
//! present them 1-based.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A validated vector of p-values, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PValues(Vec<f64>);

impl PValues {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::InvalidPValue { index, value });
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for PValues {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<PValues> for Vec<f64> {
    fn from(p: PValues) -> Self {
        p.0
    }
}

impl std::ops::Deref for PValues {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Sorted, duplicate-free set of 0-based hypothesis indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RejectionSet(Vec<usize>);

impl RejectionSet {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// All indices `0..m`.
    pub fn full(m: usize) -> Self {
        Self((0..m).collect())
    }

    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<usize> = indices.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn is_subset(&self, other: &RejectionSet) -> bool {
        self.0.iter().all(|&i| other.contains(i))
    }

    /// Elements of `self` not in `other`.
    pub fn difference(&self, other: &RejectionSet) -> RejectionSet {
        Self(self.iter().filter(|&i| !other.contains(i)).collect())
    }

    /// `{0..m} \ self`.
    pub fn complement(&self, m: usize) -> RejectionSet {
        Self((0..m).filter(|&i| !self.contains(i)).collect())
    }

    pub fn symmetric_difference_len(&self, other: &RejectionSet) -> usize {
        self.difference(other).len() + other.difference(self).len()
    }

    /// Membership mask of length `m`.
    pub fn to_mask(&self, m: usize) -> Vec<bool> {
        let mut mask = vec![false; m];
        for i in self.iter() {
            mask[i] = true;
        }
        mask
    }

    /// 1-based indices, as presented to users.
    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }
}

impl FromIterator<usize> for RejectionSet {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        Self::from_indices(iter)
    }
}

impl fmt::Display for RejectionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (n, i) in self.0.iter().enumerate() {
            if n > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", i + 1)?;
        }
        write!(f, "}}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcedureKind {
    BenjaminiHochberg,
    Bonferroni,
}

impl fmt::Display for ProcedureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProcedureKind::BenjaminiHochberg => f.write_str("bh"),
            ProcedureKind::Bonferroni => f.write_str("bonferroni"),
        }
    }
}

/// A procedure together with its threshold `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProcedureSpec")]
pub struct ProcedureSpec {
    kind: ProcedureKind,
    alpha: f64,
}

#[derive(Deserialize)]
struct RawProcedureSpec {
    kind: ProcedureKind,
    alpha: f64,
}

impl TryFrom<RawProcedureSpec> for ProcedureSpec {
    type Error = Error;

    fn try_from(raw: RawProcedureSpec) -> Result<Self> {
        Self::new(raw.kind, raw.alpha)
    }
}

impl ProcedureSpec {
    pub fn new(kind: ProcedureKind, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        Ok(Self { kind, alpha })
    }

    pub fn benjamini_hochberg(alpha: f64) -> Result<Self> {
        Self::new(ProcedureKind::BenjaminiHochberg, alpha)
    }

    pub fn bonferroni(alpha: f64) -> Result<Self> {
        Self::new(ProcedureKind::Bonferroni, alpha)
    }

    pub fn kind(&self) -> ProcedureKind {
        self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn classify(&self, p: &[f64]) -> RejectionSet {
        classify(self, p)
    }
}

fn by_value_then_index(p: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| {
        p[a].partial_cmp(&p[b])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// 1-based ranks of `p`; ties are ranked by ascending index.
pub fn ranks(p: &[f64]) -> Vec<usize> {
    let mut rank = vec![0; p.len()];
    for (r, i) in by_value_then_index(p).into_iter().enumerate() {
        rank[i] = r + 1;
    }
    rank
}

/// The Benjamini-Hochberg threshold for rank `rank` (1-based).
#[inline]
pub fn bh_line(rank: usize, m: usize, alpha: f64) -> f64 {
    rank as f64 * alpha / m as f64
}

/// Benjamini-Hochberg step-up procedure: rejects the `k` smallest p-values,
/// where `k` is the largest rank with `p_(k) <= k * alpha / m`.
pub fn bh_classify(p: &[f64], alpha: f64) -> RejectionSet {
    let m = p.len();
    let order = by_value_then_index(p);
    let cutoff = order
        .iter()
        .enumerate()
        .rev()
        .find(|(r, &i)| p[i] <= bh_line(r + 1, m, alpha))
        .map_or(0, |(r, _)| r + 1);
    RejectionSet::from_indices(order[..cutoff].iter().copied())
}

/// Bonferroni correction: rejects every `p_i <= alpha / m`.
pub fn bonferroni_classify(p: &[f64], alpha: f64) -> RejectionSet {
    let threshold = alpha / p.len() as f64;
    RejectionSet(
        p.iter()
            .enumerate()
            .filter(|(_, &v)| v <= threshold)
            .map(|(i, _)| i)
            .collect(),
    )
}

pub fn classify(spec: &ProcedureSpec, p: &[f64]) -> RejectionSet {
    match spec.kind {
        ProcedureKind::BenjaminiHochberg => bh_classify(p, spec.alpha),
        ProcedureKind::Bonferroni => bonferroni_classify(p, spec.alpha),
    }
}
