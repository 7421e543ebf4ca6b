//! Shared data model: distance matrices, p-value vectors, truth labels and
//! run configuration.
//!
//! Feature indices are 0-based inside the library. File formats and the CLI
//! use 1-based labels; conversion happens in [`crate::io`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DartError, Result};

/// P-values are clipped into `[CLIP_EPS, 1 - CLIP_EPS]` before any probit
/// transform.
pub const CLIP_EPS: f64 = 1e-15;

const SYMMETRY_TOL: f64 = 1e-9;

/// Symmetric, nonnegative, zero-diagonal matrix of feature distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    m: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Validate a dense row-major matrix.
    ///
    /// Entries that disagree with their transpose by at most 1e-9 are
    /// averaged so the stored matrix is exactly symmetric. With `normalize`
    /// the matrix is rescaled so its largest off-diagonal entry is 1.
    pub fn from_rows(rows: &[Vec<f64>], normalize: bool) -> Result<Self> {
        let m = rows.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(DartError::Validation(format!(
                    "distance matrix is not square: row {} has {} entries, expected {m}",
                    i + 1,
                    row.len()
                )));
            }
        }
        let mut data = Vec::with_capacity(m * m);
        for row in rows {
            data.extend_from_slice(row);
        }
        Self::from_flat(m, data, normalize)
    }

    pub fn from_flat(m: usize, mut data: Vec<f64>, normalize: bool) -> Result<Self> {
        if data.len() != m * m {
            return Err(DartError::DimensionMismatch {
                what: "distance matrix entries",
                expected: m * m,
                found: data.len(),
            });
        }
        for i in 0..m {
            for j in 0..m {
                let v = data[i * m + j];
                if !v.is_finite() {
                    return Err(DartError::Validation(format!(
                        "non-finite distance at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
                if v < 0.0 {
                    return Err(DartError::Validation(format!(
                        "negative distance {v} at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
            if data[i * m + i] != 0.0 {
                return Err(DartError::Validation(format!(
                    "nonzero diagonal entry {} at ({}, {})",
                    data[i * m + i],
                    i + 1,
                    i + 1
                )));
            }
        }
        for i in 0..m {
            for j in (i + 1)..m {
                let (a, b) = (data[i * m + j], data[j * m + i]);
                if (a - b).abs() > SYMMETRY_TOL {
                    return Err(DartError::Validation(format!(
                        "asymmetric distances at ({}, {}): {a} vs {b}",
                        i + 1,
                        j + 1
                    )));
                }
                let avg = 0.5 * (a + b);
                data[i * m + j] = avg;
                data[j * m + i] = avg;
            }
        }
        let mut dm = Self { m, data };
        if normalize {
            let max = dm.max_off_diagonal();
            if max > 0.0 {
                dm.data.iter_mut().for_each(|v| *v /= max);
            }
        }
        Ok(dm)
    }

    /// Euclidean distances between planar points.
    pub fn euclidean(coords: &[(f64, f64)]) -> Self {
        let m = coords.len();
        let mut data = vec![0.0; m * m];
        for i in 0..m {
            for j in (i + 1)..m {
                let d = (coords[i].0 - coords[j].0).hypot(coords[i].1 - coords[j].1);
                data[i * m + j] = d;
                data[j * m + i] = d;
            }
        }
        Self { m, data }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn max_off_diagonal(&self) -> f64 {
        let mut max = 0.0f64;
        for i in 0..self.m {
            for j in (i + 1)..self.m {
                max = max.max(self.get(i, j));
            }
        }
        max
    }

    pub fn min_off_diagonal(&self) -> f64 {
        let mut min = f64::INFINITY;
        for i in 0..self.m {
            for j in (i + 1)..self.m {
                min = min.min(self.get(i, j));
            }
        }
        min
    }

    /// Largest nearest-neighbour distance, `max_j min_{i != j} d_ij`.
    pub fn max_nearest_neighbor(&self) -> f64 {
        (0..self.m)
            .map(|j| {
                (0..self.m)
                    .filter(|&i| i != j)
                    .map(|i| self.get(i, j))
                    .fold(f64::INFINITY, f64::min)
            })
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.m).map(|i| self.row(i).to_vec()).collect()
    }
}

/// Maximum number of children a node may aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChildCap {
    Bounded(usize),
    Unbounded,
}

impl ChildCap {
    pub fn bounded(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(DartError::Config(format!(
                "children cap must be at least 2, got {m}"
            )));
        }
        Ok(ChildCap::Bounded(m))
    }

    #[inline]
    pub fn allows(&self, children: usize) -> bool {
        match self {
            ChildCap::Bounded(m) => children <= *m,
            ChildCap::Unbounded => true,
        }
    }

    pub fn as_f64(&self) -> f64 {
        match self {
            ChildCap::Bounded(m) => *m as f64,
            ChildCap::Unbounded => f64::INFINITY,
        }
    }
}

impl fmt::Display for ChildCap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChildCap::Bounded(m) => write!(f, "{m}"),
            ChildCap::Unbounded => write!(f, "inf"),
        }
    }
}

impl FromStr for ChildCap {
    type Err = DartError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(ChildCap::Unbounded);
        }
        let m: usize = t
            .parse()
            .map_err(|_| DartError::Config(format!("invalid children cap '{s}'")))?;
        ChildCap::bounded(m)
    }
}

impl Serialize for ChildCap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ChildCap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Check that thresholds g(2)..g(L) are finite and strictly increasing.
pub fn validate_thresholds(layers: usize, thresholds: &[f64]) -> Result<()> {
    if layers == 0 {
        return Err(DartError::Config("layer count must be at least 1".into()));
    }
    if thresholds.len() != layers - 1 {
        return Err(DartError::Config(format!(
            "{layers} layers need {} distance thresholds, got {}",
            layers - 1,
            thresholds.len()
        )));
    }
    if let Some(g) = thresholds.iter().find(|g| !g.is_finite() || **g < 0.0) {
        return Err(DartError::Config(format!("invalid distance threshold {g}")));
    }
    for w in thresholds.windows(2) {
        if !(w[0] < w[1]) {
            return Err(DartError::Config(format!(
                "distance thresholds must be strictly increasing: {} then {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Full configuration of one DART analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DartConfig {
    pub alpha: f64,
    pub max_children: ChildCap,
    pub layers: usize,
    /// g(2)..g(L); empty when `layers == 1`.
    pub thresholds: Vec<f64>,
    pub min_top_nodes: usize,
    pub normalize_distances: bool,
}

impl DartConfig {
    pub fn validate(&self) -> Result<()> {
        validate_alpha(self.alpha)?;
        validate_thresholds(self.layers, &self.thresholds)?;
        if self.min_top_nodes == 0 {
            return Err(DartError::Config("min_top_nodes must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for DartConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            max_children: ChildCap::Bounded(3),
            layers: 1,
            thresholds: Vec::new(),
            min_top_nodes: 30,
            normalize_distances: false,
        }
    }
}

pub fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(DartError::Config(format!(
            "alpha must lie in (0,1), got {alpha}"
        )))
    }
}

/// Feature-level p-values.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueVector {
    values: Vec<f64>,
}

impl PValueVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(DartError::Validation(format!(
                "p-value {v} of feature {} is outside [0,1]",
                i + 1
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn clipped(&self) -> Vec<f64> {
        self.values.iter().map(|&p| clip(p)).collect()
    }
}

#[inline]
pub fn clip(p: f64) -> f64 {
    p.clamp(CLIP_EPS, 1.0 - CLIP_EPS)
}

/// Which features are truly alternative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthAssignment {
    alt: Vec<bool>,
}

impl TruthAssignment {
    pub fn from_flags(alt: Vec<bool>) -> Self {
        Self { alt }
    }

    pub fn from_alt_indices(m: usize, alt_indices: &[usize]) -> Result<Self> {
        let mut alt = vec![false; m];
        for &i in alt_indices {
            if i >= m {
                return Err(DartError::InvalidArgument(format!(
                    "alternative index {i} out of range for {m} features"
                )));
            }
            alt[i] = true;
        }
        Ok(Self { alt })
    }

    pub fn len(&self) -> usize {
        self.alt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alt.is_empty()
    }

    #[inline]
    pub fn is_alt(&self, i: usize) -> bool {
        self.alt[i]
    }

    pub fn n_alt(&self) -> usize {
        self.alt.iter().filter(|a| **a).count()
    }

    pub fn alt_indices(&self) -> Vec<usize> {
        (0..self.alt.len()).filter(|&i| self.alt[i]).collect()
    }

    pub fn null_indices(&self) -> Vec<usize> {
        (0..self.alt.len()).filter(|&i| !self.alt[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_matrix_is_valid() {
        let d = DistanceMatrix::from_rows(&[vec![0.0]], false).unwrap();
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn asymmetry_names_indices() {
        let rows = vec![vec![0.0, 2.0], vec![2.5, 0.0]];
        let err = DistanceMatrix::from_rows(&rows, false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(1, 2)"), "{msg}");
    }

    #[test]
    fn rejects_bad_entries() {
        let neg = vec![vec![0.0, -1.0], vec![-1.0, 0.0]];
        assert!(DistanceMatrix::from_rows(&neg, false).is_err());
        let diag = vec![vec![0.5, 1.0], vec![1.0, 0.0]];
        assert!(DistanceMatrix::from_rows(&diag, false).is_err());
        let nan = vec![vec![0.0, f64::NAN], vec![f64::NAN, 0.0]];
        assert!(DistanceMatrix::from_rows(&nan, false).is_err());
        let ragged = vec![vec![0.0, 1.0], vec![1.0]];
        assert!(DistanceMatrix::from_rows(&ragged, false).is_err());
    }

    #[test]
    fn tiny_asymmetry_is_averaged() {
        let rows = vec![vec![0.0, 1.0], vec![1.0 + 1e-12, 0.0]];
        let d = DistanceMatrix::from_rows(&rows, false).unwrap();
        assert_eq!(d.get(0, 1), d.get(1, 0));
    }

    #[test]
    fn normalization_scales_max_to_one() {
        let rows = vec![
            vec![0.0, 5.0, 1.0],
            vec![5.0, 0.0, 2.0],
            vec![1.0, 2.0, 0.0],
        ];
        let d = DistanceMatrix::from_rows(&rows, true).unwrap();
        assert_eq!(d.max_off_diagonal(), 1.0);
        assert!((d.get(1, 2) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn child_cap_parsing() {
        assert_eq!("3".parse::<ChildCap>().unwrap(), ChildCap::Bounded(3));
        assert_eq!("inf".parse::<ChildCap>().unwrap(), ChildCap::Unbounded);
        assert!("1".parse::<ChildCap>().is_err());
        assert!("x".parse::<ChildCap>().is_err());
    }

    #[test]
    fn thresholds_must_increase() {
        assert!(validate_thresholds(3, &[1.0, 2.0]).is_ok());
        assert!(validate_thresholds(3, &[2.0, 2.0]).is_err());
        assert!(validate_thresholds(3, &[1.0]).is_err());
        assert!(validate_thresholds(1, &[]).is_ok());
    }

    #[test]
    fn pvalues_validated_and_clipped() {
        assert!(PValueVector::new(vec![0.5, 1.2]).is_err());
        let p = PValueVector::new(vec![0.0, 1.0, 0.3]).unwrap();
        let c = p.clipped();
        assert_eq!(c[0], CLIP_EPS);
        assert_eq!(c[1], 1.0 - CLIP_EPS);
        assert_eq!(c[2], 0.3);
    }
}
