//! Recursive testing on an aggregation tree, plus the Benjamini-Hochberg
//! baseline.
//!
//! Layer 1 thresholds the feature p-values directly. On each higher layer,
//! features rejected so far are removed from every node, nodes left with
//! fewer than two nonempty children are dropped, and the survivors are
//! tested with Stouffer-combined p-values against a threshold whose FDP
//! estimate accumulates the mass spent on earlier layers.

use serde::Serialize;

use crate::error::{DartError, Result};
use crate::numeric::{norm_isf, norm_sf};
use crate::tree::AggregationTree;
use crate::types::{clip, validate_alpha, PValueVector};

/// Lowest threshold the procedure will use, 1/(m sqrt(ln m)).
///
/// Infinite for m < 2, which makes every feasible set empty.
pub fn alpha_m(m: usize) -> f64 {
    if m < 2 {
        return f64::INFINITY;
    }
    let m = m as f64;
    1.0 / (m * m.ln().sqrt())
}

/// Stouffer combination of clipped p-values. A single p-value is returned
/// clipped but otherwise unchanged.
pub fn combine_pvalues(p: &[f64]) -> Result<f64> {
    match p {
        [] => Err(DartError::InvalidArgument(
            "cannot combine an empty set of p-values".into(),
        )),
        [single] => Ok(clip(*single)),
        _ => {
            let z: f64 = p.iter().map(|&v| norm_isf(clip(v))).sum();
            Ok(norm_sf(z / (p.len() as f64).sqrt()))
        }
    }
}

/// Largest t in [lo, alpha] with `prior + slope * t <= alpha * max(base + W(t), 1)`,
/// where W(t) sums the weights of values strictly below t.
///
/// W is a step function, so on each interval between consecutive distinct
/// values the constraint is a linear bound on t. Intervals are scanned from
/// the top and the first feasible one yields the supremum.
fn threshold_sup(
    values: &[(f64, f64)],
    base: f64,
    prior: f64,
    slope: f64,
    alpha: f64,
    lo: f64,
) -> Option<f64> {
    if !(slope > 0.0) || lo > alpha {
        return None;
    }
    let mut sorted: Vec<(f64, f64)> = values.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // distinct values with the cumulative weight at or below each
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
    let mut acc = 0.0;
    for &(v, w) in &sorted {
        acc += w;
        match points.last_mut() {
            Some(last) if last.0 == v => last.1 = acc,
            _ => points.push((v, acc)),
        }
    }
    // interval j is (left_j, right_j] with W = cumulative weight of point j-1
    for j in (0..=points.len()).rev() {
        let left = if j == 0 { f64::NEG_INFINITY } else { points[j - 1].0 };
        let right = if j == points.len() { f64::INFINITY } else { points[j].0 };
        let w = if j == 0 { 0.0 } else { points[j - 1].1 };
        if left >= alpha {
            continue;
        }
        if right < lo {
            break;
        }
        let bound = (alpha * (base + w).max(1.0) - prior) / slope;
        let hi = right.min(bound).min(alpha);
        if hi >= lo && hi > left {
            return Some(hi);
        }
    }
    None
}

/// Layer-1 threshold over the raw feature p-values and the features it
/// rejects (strictly below the threshold).
pub fn layer1_threshold(p: &PValueVector, alpha: f64) -> Result<(Option<f64>, Vec<usize>)> {
    validate_alpha(alpha)?;
    let t = layer1_sup(&p.clipped(), alpha);
    Ok((t, reject_below(&p.clipped(), t)))
}

fn layer1_sup(clipped: &[f64], alpha: f64) -> Option<f64> {
    let m = clipped.len();
    let values: Vec<(f64, f64)> = clipped.iter().map(|&v| (v, 1.0)).collect();
    threshold_sup(&values, 0.0, 0.0, m as f64, alpha, alpha_m(m))
}

fn reject_below(values: &[f64], t: Option<f64>) -> Vec<usize> {
    match t {
        None => Vec::new(),
        Some(t) => (0..values.len()).filter(|&i| values[i] < t).collect(),
    }
}

/// A node surviving on some layer after removal of earlier rejections.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkingNode {
    /// Tree node id the working node was derived from.
    pub source: usize,
    /// Surviving features, sorted.
    pub features: Vec<usize>,
    /// Number of nonempty surviving children.
    pub children: usize,
    pub pvalue: f64,
}

/// Working nodes of `layer` (at least 2) given the features rejected on
/// earlier layers. P-values are left at NaN; see [`run_dart`].
pub fn form_working_nodes(
    tree: &AggregationTree,
    layer: usize,
    rejected: &[bool],
) -> Result<Vec<WorkingNode>> {
    if layer < 2 || layer > tree.layer_count() {
        return Err(DartError::InvalidArgument(format!(
            "working nodes exist on layers 2..={}, got {layer}",
            tree.layer_count()
        )));
    }
    if rejected.len() != tree.feature_count() {
        return Err(DartError::DimensionMismatch {
            what: "rejection mask",
            expected: tree.feature_count(),
            found: rejected.len(),
        });
    }
    let mut out = Vec::new();
    for node in tree.layer(layer) {
        let live = node
            .children
            .iter()
            .filter(|&&c| tree.node(c).features.iter().any(|&f| !rejected[f]))
            .count();
        if live < 2 {
            continue;
        }
        out.push(WorkingNode {
            source: node.id,
            features: node.features.iter().copied().filter(|&f| !rejected[f]).collect(),
            children: live,
            pvalue: f64::NAN,
        });
    }
    Ok(out)
}

/// Threshold for a layer above the first.
///
/// `history` holds (m(l'), t(l')) for every earlier layer, with `None` for
/// layers that had no threshold; `rejected_before` is the number of
/// features rejected so far and `m` the total feature count. Returns the
/// threshold and the indices of the rejected working nodes.
pub fn layer_threshold(
    working: &[WorkingNode],
    history: &[(usize, Option<f64>)],
    rejected_before: usize,
    alpha: f64,
    m: usize,
) -> Result<(Option<f64>, Vec<usize>)> {
    validate_alpha(alpha)?;
    let prior: f64 = history
        .iter()
        .map(|&(ml, t)| ml as f64 * t.unwrap_or(0.0))
        .sum();
    let m_layer: usize = working.iter().map(|w| w.features.len()).sum();
    let values: Vec<(f64, f64)> = working
        .iter()
        .map(|w| (w.pvalue, w.features.len() as f64))
        .collect();
    let t = threshold_sup(
        &values,
        rejected_before as f64,
        prior,
        m_layer as f64,
        alpha,
        alpha_m(m),
    );
    let nodes = match t {
        None => Vec::new(),
        Some(t) => (0..working.len()).filter(|&i| working[i].pvalue < t).collect(),
    };
    Ok((t, nodes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRecord {
    pub layer: usize,
    pub working: Vec<WorkingNode>,
    pub threshold: Option<f64>,
    /// Indices into `working`.
    pub rejected_nodes: Vec<usize>,
    /// Features rejected on this layer, sorted.
    pub rejected_features: Vec<usize>,
    /// Total size of the working nodes.
    pub m_layer: usize,
    /// Features rejected on this and all earlier layers.
    pub cumulative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestOutcome {
    pub m: usize,
    pub alpha: f64,
    pub alpha_m: f64,
    pub layers: Vec<LayerRecord>,
}

impl TestOutcome {
    /// Features rejected on layers 1..=layer, sorted.
    pub fn rejected_through(&self, layer: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.layers[..layer.min(self.layers.len())]
            .iter()
            .flat_map(|l| l.rejected_features.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    /// All rejected features, sorted.
    pub fn rejected(&self) -> Vec<usize> {
        self.rejected_through(self.layers.len())
    }

    /// Rejected nodes of every layer as feature sets.
    pub fn rejected_node_sets(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.layers.iter().flat_map(|l| {
            l.rejected_nodes
                .iter()
                .map(move |&i| l.working[i].features.as_slice())
        })
    }

    /// JSON with 1-based feature labels.
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Node {
            source: usize,
            features: Vec<usize>,
            children: usize,
            pvalue: f64,
            rejected: bool,
        }
        #[derive(Serialize)]
        struct Layer {
            layer: usize,
            threshold: Option<f64>,
            m_layer: usize,
            cumulative: usize,
            rejected_features: Vec<usize>,
            working: Vec<Node>,
        }
        #[derive(Serialize)]
        struct Repr {
            m: usize,
            alpha: f64,
            alpha_m: f64,
            rejected: Vec<usize>,
            layers: Vec<Layer>,
        }
        let one = |v: &[usize]| v.iter().map(|f| f + 1).collect::<Vec<_>>();
        let repr = Repr {
            m: self.m,
            alpha: self.alpha,
            alpha_m: self.alpha_m,
            rejected: one(&self.rejected()),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    layer: l.layer,
                    threshold: l.threshold,
                    m_layer: l.m_layer,
                    cumulative: l.cumulative,
                    rejected_features: one(&l.rejected_features),
                    working: l
                        .working
                        .iter()
                        .enumerate()
                        .map(|(i, w)| Node {
                            source: w.source,
                            features: one(&w.features),
                            children: w.children,
                            pvalue: w.pvalue,
                            rejected: l.rejected_nodes.binary_search(&i).is_ok(),
                        })
                        .collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&repr)?)
    }

    /// Per-layer summary: layer, node count, threshold, rejected node
    /// count, cumulative rejected features.
    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "layer",
            "node_count",
            "threshold",
            "rejected_node_count",
            "cumulative_rejected_features",
        ])?;
        for l in &self.layers {
            w.write_record([
                l.layer.to_string(),
                l.working.len().to_string(),
                l.threshold.map(|t| t.to_string()).unwrap_or_else(|| "none".into()),
                l.rejected_nodes.len().to_string(),
                l.cumulative.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| DartError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Run the full layered procedure on `tree`.
pub fn run_dart(tree: &AggregationTree, p: &PValueVector, alpha: f64) -> Result<TestOutcome> {
    validate_alpha(alpha)?;
    let m = tree.feature_count();
    if p.len() != m {
        return Err(DartError::DimensionMismatch {
            what: "p-values versus tree features",
            expected: m,
            found: p.len(),
        });
    }
    let clipped = p.clipped();
    let z: Vec<f64> = clipped.iter().map(|&v| norm_isf(v)).collect();
    let mut rejected = vec![false; m];
    let mut n_rejected = 0usize;
    let mut history: Vec<(usize, Option<f64>)> = Vec::with_capacity(tree.layer_count());
    let mut layers = Vec::with_capacity(tree.layer_count());

    let t1 = layer1_sup(&clipped, alpha);
    let r1 = reject_below(&clipped, t1);
    for &f in &r1 {
        rejected[f] = true;
    }
    n_rejected += r1.len();
    history.push((m, t1));
    layers.push(LayerRecord {
        layer: 1,
        working: (0..m)
            .map(|i| WorkingNode {
                source: tree.layer_ids(1)[i],
                features: vec![i],
                children: 0,
                pvalue: clipped[i],
            })
            .collect(),
        threshold: t1,
        rejected_nodes: r1.clone(),
        rejected_features: r1,
        m_layer: m,
        cumulative: n_rejected,
    });

    for layer in 2..=tree.layer_count() {
        let mut working = form_working_nodes(tree, layer, &rejected)?;
        for w in &mut working {
            w.pvalue = if w.features.len() == 1 {
                clipped[w.features[0]]
            } else {
                let s: f64 = w.features.iter().map(|&f| z[f]).sum();
                norm_sf(s / (w.features.len() as f64).sqrt())
            };
        }
        let (t, nodes) = layer_threshold(&working, &history, n_rejected, alpha, m)?;
        let mut feats: Vec<usize> = nodes
            .iter()
            .flat_map(|&i| working[i].features.iter().copied())
            .collect();
        feats.sort_unstable();
        for &f in &feats {
            rejected[f] = true;
        }
        n_rejected += feats.len();
        let m_layer = working.iter().map(|w| w.features.len()).sum();
        history.push((m_layer, t));
        layers.push(LayerRecord {
            layer,
            working,
            threshold: t,
            rejected_nodes: nodes,
            rejected_features: feats,
            m_layer,
            cumulative: n_rejected,
        });
    }
    Ok(TestOutcome {
        m,
        alpha,
        alpha_m: alpha_m(m),
        layers,
    })
}

/// Benjamini-Hochberg step-up: rejects the k smallest p-values for the
/// largest k with p_(k) <= k alpha / m.
pub fn run_bh(p: &PValueVector, alpha: f64) -> Result<Vec<usize>> {
    validate_alpha(alpha)?;
    let m = p.len();
    let v = p.values();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    let k = (1..=m)
        .rev()
        .find(|&k| v[order[k - 1]] <= k as f64 * alpha / m as f64)
        .unwrap_or(0);
    let mut out = order[..k].to_vec();
    out.sort_unstable();
    Ok(out)
}
