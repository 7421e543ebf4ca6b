//! Error and power metrics of a rejection set against known truth.

use crate::error::{DartError, Result};
use crate::testing::TestOutcome;
use crate::types::TruthAssignment;

/// False discovery proportion |R ∩ null| / max(|R|, 1).
pub fn fdp(rejected: &[usize], truth: &TruthAssignment) -> f64 {
    let false_hits = rejected.iter().filter(|&&i| !truth.is_alt(i)).count();
    false_hits as f64 / rejected.len().max(1) as f64
}

/// Fraction of alternative features that were rejected.
pub fn power(rejected: &[usize], truth: &TruthAssignment) -> Result<f64> {
    let n_alt = truth.n_alt();
    if n_alt == 0 {
        return Err(DartError::UndefinedMetric(
            "sensitivity is undefined without alternative features".into(),
        ));
    }
    let hits = rejected.iter().filter(|&&i| truth.is_alt(i)).count();
    Ok(hits as f64 / n_alt as f64)
}

pub fn feature_fdp(outcome: &TestOutcome, truth: &TruthAssignment) -> f64 {
    fdp(&outcome.rejected(), truth)
}

/// Size-weighted share of rejected nodes that contain only null features.
pub fn weighted_node_fdp(outcome: &TestOutcome, truth: &TruthAssignment) -> f64 {
    node_fdp(outcome.rejected_node_sets(), truth)
}

pub(crate) fn node_fdp<'a>(
    nodes: impl Iterator<Item = &'a [usize]>,
    truth: &TruthAssignment,
) -> f64 {
    let (mut false_size, mut total) = (0usize, 0usize);
    for node in nodes {
        total += node.len();
        if node.iter().all(|&i| !truth.is_alt(i)) {
            false_size += node.len();
        }
    }
    false_size as f64 / total.max(1) as f64
}

pub fn sensitivity(outcome: &TestOutcome, truth: &TruthAssignment) -> Result<f64> {
    power(&outcome.rejected(), truth)
}
