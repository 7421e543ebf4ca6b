//! Choice of the children cap, the number of layers and the distance
//! thresholds.
//!
//! Thresholds are chosen layer by layer on the grid g(l-1) + k s with step
//! s = 2 / sqrt(n ln m ln ln m). Each candidate builds the next layer and
//! counts its nodes with at least two children; the scan stops once the
//! grid passes an upper bound or the count has failed to grow for ten
//! consecutive candidates, and the smallest maximizing candidate wins.

use serde::{Deserialize, Serialize};

use crate::error::{DartError, Result};
use crate::tree::{aggregate_layer_with, build_tree, layer_linkage};
use crate::types::{ChildCap, DistanceMatrix};

/// Smallest feature count for automatic threshold selection.
pub const MIN_FEATURES_FOR_SEARCH: usize = 16;

const STAGNATION_LIMIT: usize = 10;

pub fn default_m() -> usize {
    3
}

/// max(1, ceil(log_M(m / c_m))), computed exactly in integers.
pub fn default_l(m: usize, max_children: usize, c_m: usize) -> Result<usize> {
    if m == 0 || max_children < 2 || c_m == 0 {
        return Err(DartError::Config(format!(
            "default layer count needs m >= 1, M >= 2 and c_m >= 1; got ({m}, {max_children}, {c_m})"
        )));
    }
    let mut layers = 0usize;
    let mut reach = c_m as u128;
    while reach < m as u128 {
        reach *= max_children as u128;
        layers += 1;
    }
    Ok(layers.max(1))
}

/// Grid step 2 / sqrt(n ln m ln ln m).
pub fn grid_step(n: usize, m: usize) -> Result<f64> {
    if m < MIN_FEATURES_FOR_SEARCH {
        return Err(DartError::Config(format!(
            "automatic threshold search needs at least {MIN_FEATURES_FOR_SEARCH} features, got {m}; supply the thresholds explicitly"
        )));
    }
    if n == 0 {
        return Err(DartError::Config("sample size must be at least 1".into()));
    }
    let lm = (m as f64).ln();
    Ok(2.0 / (n as f64 * lm * lm.ln()).sqrt())
}

/// Upper end of the search, (2 M^(L-2) - 1) times the largest
/// nearest-neighbour distance.
pub fn search_upper_bound(d: &DistanceMatrix, cap: ChildCap, layers: usize) -> f64 {
    let d_max = d.max_nearest_neighbor();
    let factor = match cap {
        ChildCap::Bounded(mc) => 2.0 * (mc as f64).powi(layers as i32 - 2) - 1.0,
        ChildCap::Unbounded if layers <= 2 => 1.0,
        ChildCap::Unbounded => f64::INFINITY,
    };
    factor * d_max
}

/// Testable nodes on the top layer of the tree built with thresholds
/// `lower` followed by `g`.
pub fn count_testable_nodes(
    d: &DistanceMatrix,
    cap: ChildCap,
    lower: &[f64],
    g: f64,
) -> Result<usize> {
    let mut thresholds = lower.to_vec();
    thresholds.push(g);
    let layers = thresholds.len() + 1;
    let tree = build_tree(d, cap, layers, &thresholds)?;
    Ok(tree.testable_count(layers))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    UpperBound,
    Stagnation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub k: usize,
    pub g: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSearch {
    pub layer: usize,
    pub start: f64,
    pub points: Vec<GridPoint>,
    pub chosen: usize,
    pub stop: StopReason,
}

impl LayerSearch {
    pub fn chosen_point(&self) -> &GridPoint {
        &self.points[self.chosen]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GSearchTrace {
    pub n: usize,
    pub m: usize,
    pub step: f64,
    pub upper_bound: f64,
    pub layers: Vec<LayerSearch>,
}

impl GSearchTrace {
    /// Thresholds in units of 1 / sqrt(n ln m ln ln m), i.e. `g / step * 2`.
    pub fn scaled(&self, g: f64) -> f64 {
        2.0 * g / self.step
    }

    /// One row per candidate: layer, k, g_scaled, g, count, chosen.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "k", "g_scaled", "g", "count", "chosen"])?;
        for l in &self.layers {
            for (i, p) in l.points.iter().enumerate() {
                w.write_record([
                    l.layer.to_string(),
                    p.k.to_string(),
                    self.scaled(p.g).to_string(),
                    p.g.to_string(),
                    p.count.to_string(),
                    (i == l.chosen).to_string(),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| DartError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Select g(2)..g(L) for sample size `n`.
///
/// Each layer reuses the tree prefix fixed by the thresholds already
/// chosen, so a candidate costs one layer build.
pub fn select_g(
    d: &DistanceMatrix,
    n: usize,
    cap: ChildCap,
    layers: usize,
) -> Result<(Vec<f64>, GSearchTrace)> {
    let m = d.len();
    let step = grid_step(n, m)?;
    if layers == 0 {
        return Err(DartError::Config("layer count must be at least 1".into()));
    }
    let upper = search_upper_bound(d, cap, layers);
    let mut trace = GSearchTrace {
        n,
        m,
        step,
        upper_bound: upper,
        layers: Vec::new(),
    };
    let mut chosen: Vec<f64> = Vec::with_capacity(layers.saturating_sub(1));
    let mut prev: Vec<Vec<usize>> = (0..m).map(|i| vec![i]).collect();
    for layer in 2..=layers {
        let start = chosen.last().copied().unwrap_or(0.0);
        let linkage = layer_linkage(d, &prev);
        let mut points: Vec<GridPoint> = Vec::new();
        let mut stagnant = 1usize;
        let mut last: Option<usize> = None;
        let mut k = 1usize;
        let stop = loop {
            let g = start + k as f64 * step;
            if !points.is_empty() && g > upper {
                break StopReason::UpperBound;
            }
            if stagnant >= STAGNATION_LIMIT {
                break StopReason::Stagnation;
            }
            let count = aggregate_layer_with(&prev, &linkage, cap, g, layer, None)
                .iter()
                .filter(|n| n.children.len() >= 2)
                .count();
            stagnant = match last {
                Some(c) if c >= count => stagnant + 1,
                _ => 1,
            };
            last = Some(count);
            points.push(GridPoint { k, g, count });
            k += 1;
        };
        let best = points.iter().map(|p| p.count).max().unwrap_or(0);
        let idx = points.iter().position(|p| p.count == best).unwrap_or(0);
        let g = points[idx].g;
        log::debug!(
            "layer {layer}: chose g = {g} (k = {}) with {best} testable nodes after {} candidates",
            points[idx].k,
            points.len()
        );
        chosen.push(g);
        prev = aggregate_layer_with(&prev, &linkage, cap, g, layer, None)
            .into_iter()
            .map(|n| n.features)
            .collect();
        trace.layers.push(LayerSearch {
            layer,
            start,
            points,
            chosen: idx,
            stop,
        });
    }
    Ok((chosen, trace))
}
