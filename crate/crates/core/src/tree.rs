//! Aggregation trees: greedy complete-linkage construction under a distance
//! threshold and a children cap.
//!
//! Layer 1 holds one singleton node per feature. Layer `l` is built from
//! layer `l-1` by repeatedly merging the closest pair of candidate nodes
//! until the closest pair is farther apart than `g(l)`. A merge that brings
//! a node to exactly `M` children retires it from the candidate pool; a
//! merge that would exceed `M` is refused and that one pair is blocked for
//! the rest of the layer. Nodes left over when aggregation stops are carried
//! up unchanged as single-child carriers.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{DartError, Result};
use crate::types::{validate_thresholds, ChildCap, DistanceMatrix};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: usize,
    /// 1-based layer index.
    pub layer: usize,
    /// Sorted 0-based feature indices.
    pub features: Vec<usize>,
    /// Ids of the children on the layer below; empty on layer 1.
    pub children: Vec<usize>,
}

impl Node {
    /// A node carried up from the layer below without merging.
    pub fn is_carrier(&self) -> bool {
        self.children.len() == 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationTree {
    m: usize,
    max_children: ChildCap,
    thresholds: Vec<f64>,
    nodes: Vec<Node>,
    layers: Vec<Vec<usize>>,
}

impl AggregationTree {
    pub fn feature_count(&self) -> usize {
        self.m
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn max_children(&self) -> ChildCap {
        self.max_children
    }

    /// g(2)..g(L).
    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Node ids of 1-based layer `layer`.
    pub fn layer_ids(&self, layer: usize) -> &[usize] {
        &self.layers[layer - 1]
    }

    pub fn layer(&self, layer: usize) -> impl Iterator<Item = &Node> + '_ {
        self.layers[layer - 1].iter().map(move |&id| &self.nodes[id])
    }

    /// Number of nodes on `layer` with at least two children.
    pub fn testable_count(&self, layer: usize) -> usize {
        self.layer(layer).filter(|n| n.children.len() >= 2).count()
    }

    /// Copy of the first `layers` layers.
    pub fn truncated(&self, layers: usize) -> Result<Self> {
        if layers == 0 || layers > self.layer_count() {
            return Err(DartError::InvalidArgument(format!(
                "cannot truncate a {}-layer tree to {layers} layers",
                self.layer_count()
            )));
        }
        let keep: usize = self.layers[..layers].iter().map(Vec::len).sum();
        Ok(Self {
            m: self.m,
            max_children: self.max_children,
            thresholds: self.thresholds[..layers - 1].to_vec(),
            nodes: self.nodes[..keep].to_vec(),
            layers: self.layers[..layers].to_vec(),
        })
    }

    /// Check the structural invariants: every layer partitions the
    /// features, layer 1 is all singletons, every node is the union of its
    /// children on the layer below, and each node respects the children
    /// cap. With a distance matrix, diameters are checked against g(l).
    pub fn check_invariants(&self, d: Option<&DistanceMatrix>) -> std::result::Result<(), String> {
        let m = self.m;
        if self.layers.is_empty() {
            return Err("tree has no layers".into());
        }
        for (li, ids) in self.layers.iter().enumerate() {
            let layer = li + 1;
            let mut seen = vec![false; m];
            for &id in ids {
                let node = &self.nodes[id];
                if node.layer != layer {
                    return Err(format!("node {id} listed on layer {layer} but tagged {}", node.layer));
                }
                if node.features.is_empty() {
                    return Err(format!("node {id} is empty"));
                }
                for &f in &node.features {
                    if f >= m || seen[f] {
                        return Err(format!("layer {layer}: feature {f} repeated or out of range"));
                    }
                    seen[f] = true;
                }
                if layer == 1 {
                    if node.features.len() != 1 || !node.children.is_empty() {
                        return Err(format!("layer-1 node {id} is not a leaf"));
                    }
                    continue;
                }
                if node.children.is_empty() {
                    return Err(format!("node {id} on layer {layer} has no children"));
                }
                if !self.max_children.allows(node.children.len()) {
                    return Err(format!(
                        "node {id} has {} children, cap {}",
                        node.children.len(),
                        self.max_children
                    ));
                }
                let mut union: Vec<usize> = Vec::new();
                for &c in &node.children {
                    let child = &self.nodes[c];
                    if child.layer + 1 != layer {
                        return Err(format!("child {c} of node {id} is not on layer {}", layer - 1));
                    }
                    union.extend_from_slice(&child.features);
                }
                union.sort_unstable();
                if union != node.features {
                    return Err(format!("node {id} is not the union of its children"));
                }
                if let Some(d) = d {
                    let g = self.thresholds[layer - 2];
                    let dia = node_diameter(&node.features, d);
                    if dia > g {
                        return Err(format!("node {id} diameter {dia} exceeds g = {g}"));
                    }
                }
            }
            if seen.iter().any(|s| !s) {
                return Err(format!("layer {layer} does not cover all features"));
            }
        }
        if self.layers[0].len() != m {
            return Err("layer 1 must hold one leaf per feature".into());
        }
        Ok(())
    }
}

/// Complete-linkage distance between two disjoint feature sets.
pub fn node_dist(a: &[usize], b: &[usize], d: &DistanceMatrix) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(DartError::InvalidArgument("node distance needs nonempty nodes".into()));
    }
    let set: HashSet<usize> = a.iter().copied().collect();
    if let Some(f) = b.iter().find(|f| set.contains(f)) {
        return Err(DartError::InvalidArgument(format!(
            "nodes overlap at feature {}",
            f + 1
        )));
    }
    Ok(linkage(a, b, d))
}

fn linkage(a: &[usize], b: &[usize], d: &DistanceMatrix) -> f64 {
    let mut max = 0.0f64;
    for &i in a {
        let row = d.row(i);
        for &j in b {
            max = max.max(row[j]);
        }
    }
    max
}

/// Largest pairwise distance inside a node; 0 for singletons.
pub fn node_diameter(a: &[usize], d: &DistanceMatrix) -> f64 {
    let mut max = 0.0f64;
    for (k, &i) in a.iter().enumerate() {
        for &j in &a[k + 1..] {
            max = max.max(d.get(i, j));
        }
    }
    max
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeAction {
    Merge,
    CapInfinity,
    Stop,
}

/// One step of the greedy loop.
///
/// `node_a` and `node_b` are layer-local candidate indices: values below
/// the size of the previous layer refer to its nodes in id order, larger
/// values to nodes formed during this layer, numbered by creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub step: usize,
    pub layer: usize,
    pub node_a: Option<usize>,
    pub node_b: Option<usize>,
    pub distance: f64,
    pub action: MergeAction,
}

#[derive(Debug, Clone, Copy)]
struct PairKey {
    dist: f64,
    a: usize,
    b: usize,
}

impl PartialEq for PairKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for PairKey {}

impl PartialOrd for PairKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PairKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.a.cmp(&other.a))
            .then(self.b.cmp(&other.b))
    }
}

struct Candidate {
    features: Vec<usize>,
    /// Indices into the previous layer.
    children: Vec<usize>,
    /// Formed on this layer (member of the layer's node set).
    formed: bool,
    /// Still eligible for merging.
    active: bool,
    /// Not yet absorbed into a larger node.
    alive: bool,
}

/// A node produced by [`aggregate_layer`]: sorted features and the indices
/// of its children in the previous layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerNode {
    pub features: Vec<usize>,
    pub children: Vec<usize>,
}

/// Complete-linkage distances between the nodes of a layer, stored
/// lower-triangular: entry `[b][a]` holds the distance of nodes a < b.
pub fn layer_linkage(d: &DistanceMatrix, prev: &[Vec<usize>]) -> Vec<Vec<f64>> {
    (0..prev.len())
        .map(|b| (0..b).map(|a| linkage(&prev[a], &prev[b], d)).collect())
        .collect()
}

/// Build one layer on top of `prev` (feature sets of the previous layer in
/// id order). Output nodes are sorted by smallest feature.
pub fn aggregate_layer(
    d: &DistanceMatrix,
    prev: &[Vec<usize>],
    cap: ChildCap,
    g: f64,
    layer: usize,
    log: Option<&mut Vec<MergeEvent>>,
) -> Vec<LayerNode> {
    aggregate_layer_with(prev, &layer_linkage(d, prev), cap, g, layer, log)
}

/// As [`aggregate_layer`] with the layer distances from [`layer_linkage`]
/// precomputed, so several thresholds can share them.
pub fn aggregate_layer_with(
    prev: &[Vec<usize>],
    linkage0: &[Vec<f64>],
    cap: ChildCap,
    g: f64,
    layer: usize,
    mut log: Option<&mut Vec<MergeEvent>>,
) -> Vec<LayerNode> {
    let k = prev.len();
    let mut cands: Vec<Candidate> = prev
        .iter()
        .enumerate()
        .map(|(i, f)| Candidate {
            features: f.clone(),
            children: vec![i],
            formed: false,
            active: true,
            alive: true,
        })
        .collect();
    // dist[b][a] holds the distance of candidates a < b
    let mut dist: Vec<Vec<f64>> = Vec::with_capacity(2 * k);
    let mut heap = BinaryHeap::new();
    for (b, row) in linkage0.iter().enumerate() {
        for (a, &v) in row.iter().enumerate() {
            if v <= g {
                heap.push(Reverse(PairKey { dist: v, a, b }));
            }
        }
        dist.push(row.clone());
    }
    let pair = |dist: &Vec<Vec<f64>>, a: usize, b: usize| -> f64 {
        if a < b {
            dist[b][a]
        } else {
            dist[a][b]
        }
    };

    let mut blocked: HashSet<(usize, usize)> = HashSet::new();
    let mut step = 0usize;
    let mut carriers: Vec<usize> = Vec::new();

    loop {
        let next = loop {
            match heap.pop() {
                None => break None,
                Some(Reverse(p)) => {
                    if cands[p.a].active && cands[p.b].active && !blocked.contains(&(p.a, p.b)) {
                        break Some(p);
                    }
                }
            }
        };
        let Some(p) = next else {
            if let Some(log) = log.as_deref_mut() {
                let active: Vec<usize> = (0..cands.len()).filter(|&i| cands[i].active).collect();
                let mut min = f64::INFINITY;
                for (x, &a) in active.iter().enumerate() {
                    for &b in &active[x + 1..] {
                        if !blocked.contains(&(a, b)) {
                            min = min.min(pair(&dist, a, b));
                        }
                    }
                }
                step += 1;
                log.push(MergeEvent {
                    step,
                    layer,
                    node_a: None,
                    node_b: None,
                    distance: min,
                    action: MergeAction::Stop,
                });
            }
            for (i, c) in cands.iter_mut().enumerate() {
                if c.active && !c.formed {
                    c.active = false;
                    carriers.push(i);
                }
            }
            break;
        };

        let (a, b) = (p.a, p.b);
        let child_list = |c: &Candidate, idx: usize| -> Vec<usize> {
            if c.formed {
                c.children.clone()
            } else {
                vec![idx]
            }
        };
        let mut children = child_list(&cands[a], a);
        children.extend(child_list(&cands[b], b));
        let n_children = children.len();
        let retire = match cap {
            ChildCap::Unbounded => false,
            ChildCap::Bounded(mc) if n_children < mc => false,
            ChildCap::Bounded(mc) if n_children == mc => true,
            ChildCap::Bounded(_) => {
                blocked.insert((a, b));
                step += 1;
                if let Some(log) = log.as_deref_mut() {
                    log.push(MergeEvent {
                        step,
                        layer,
                        node_a: Some(a),
                        node_b: Some(b),
                        distance: p.dist,
                        action: MergeAction::CapInfinity,
                    });
                }
                continue;
            }
        };
        step += 1;
        if let Some(log) = log.as_deref_mut() {
            log.push(MergeEvent {
                step,
                layer,
                node_a: Some(a),
                node_b: Some(b),
                distance: p.dist,
                action: MergeAction::Merge,
            });
        }

        for &x in &[a, b] {
            cands[x].active = false;
            cands[x].alive = false;
        }
        let mut features = cands[a].features.clone();
        features.extend_from_slice(&cands[b].features);
        features.sort_unstable();
        let new_idx = cands.len();
        let mut row = Vec::with_capacity(new_idx);
        for x in 0..new_idx {
            if cands[x].active {
                let v = pair(&dist, a, x).max(pair(&dist, b, x));
                if !retire && v <= g {
                    heap.push(Reverse(PairKey { dist: v, a: x, b: new_idx }));
                }
                row.push(v);
            } else {
                row.push(f64::NAN);
            }
        }
        dist.push(row);
        cands.push(Candidate {
            features,
            children,
            formed: true,
            active: !retire,
            alive: true,
        });
    }

    let mut out: Vec<LayerNode> = cands
        .iter()
        .filter(|c| c.formed && c.alive)
        .map(|c| {
            let mut children = c.children.clone();
            children.sort_unstable();
            LayerNode {
                features: c.features.clone(),
                children,
            }
        })
        .chain(carriers.iter().map(|&i| LayerNode {
            features: cands[i].features.clone(),
            children: vec![i],
        }))
        .collect();
    out.sort_by_key(|n| n.features[0]);
    out
}

/// Build an `layers`-layer aggregation tree with thresholds g(2)..g(L).
pub fn build_tree(
    d: &DistanceMatrix,
    cap: ChildCap,
    layers: usize,
    thresholds: &[f64],
) -> Result<AggregationTree> {
    build_tree_impl(d, cap, layers, thresholds, None)
}

/// As [`build_tree`], also returning the greedy merge log.
pub fn build_tree_logged(
    d: &DistanceMatrix,
    cap: ChildCap,
    layers: usize,
    thresholds: &[f64],
) -> Result<(AggregationTree, Vec<MergeEvent>)> {
    let mut log = Vec::new();
    let tree = build_tree_impl(d, cap, layers, thresholds, Some(&mut log))?;
    Ok((tree, log))
}

fn build_tree_impl(
    d: &DistanceMatrix,
    cap: ChildCap,
    layers: usize,
    thresholds: &[f64],
    mut log: Option<&mut Vec<MergeEvent>>,
) -> Result<AggregationTree> {
    validate_thresholds(layers, thresholds)?;
    if let ChildCap::Bounded(mc) = cap {
        if mc < 2 {
            return Err(DartError::Config(format!("children cap must be at least 2, got {mc}")));
        }
    }
    let m = d.len();
    if m == 0 {
        return Err(DartError::InvalidArgument("distance matrix is empty".into()));
    }
    let mut nodes: Vec<Node> = (0..m)
        .map(|i| Node {
            id: i,
            layer: 1,
            features: vec![i],
            children: Vec::new(),
        })
        .collect();
    let mut layer_ids: Vec<Vec<usize>> = vec![(0..m).collect()];
    for layer in 2..=layers {
        let prev_ids = layer_ids.last().unwrap().clone();
        let prev: Vec<Vec<usize>> = prev_ids.iter().map(|&id| nodes[id].features.clone()).collect();
        let built = aggregate_layer(d, &prev, cap, thresholds[layer - 2], layer, log.as_deref_mut());
        let mut ids = Vec::with_capacity(built.len());
        for ln in built {
            let id = nodes.len();
            nodes.push(Node {
                id,
                layer,
                features: ln.features,
                children: ln.children.iter().map(|&c| prev_ids[c]).collect(),
            });
            ids.push(id);
        }
        layer_ids.push(ids);
    }
    Ok(AggregationTree {
        m,
        max_children: cap,
        thresholds: thresholds.to_vec(),
        nodes,
        layers: layer_ids,
    })
}

#[derive(Serialize, Deserialize)]
struct NodeRepr {
    id: usize,
    layer: usize,
    features: Vec<usize>,
    children: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TreeRepr {
    m: usize,
    layers: usize,
    max_children: ChildCap,
    thresholds: Vec<f64>,
    layer_nodes: Vec<Vec<usize>>,
    nodes: Vec<NodeRepr>,
}

impl AggregationTree {
    /// JSON form: nodes ordered by id, features as 1-based labels.
    pub fn to_json(&self) -> Result<String> {
        let repr = TreeRepr {
            m: self.m,
            layers: self.layers.len(),
            max_children: self.max_children,
            thresholds: self.thresholds.clone(),
            layer_nodes: self.layers.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRepr {
                    id: n.id,
                    layer: n.layer,
                    features: n.features.iter().map(|f| f + 1).collect(),
                    children: n.children.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&repr)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let repr: TreeRepr = serde_json::from_str(s)?;
        let mut nodes = Vec::with_capacity(repr.nodes.len());
        for (i, n) in repr.nodes.into_iter().enumerate() {
            if n.id != i {
                return Err(DartError::Validation(format!(
                    "tree nodes must be listed by id; found id {} at position {i}",
                    n.id
                )));
            }
            if n.features.contains(&0) {
                return Err(DartError::Validation(format!(
                    "node {i}: feature labels are 1-based"
                )));
            }
            let mut features: Vec<usize> = n.features.iter().map(|f| f - 1).collect();
            features.sort_unstable();
            if n.children.iter().any(|&c| c >= i) {
                return Err(DartError::Validation(format!(
                    "node {i}: child ids must precede the parent"
                )));
            }
            nodes.push(Node {
                id: n.id,
                layer: n.layer,
                features,
                children: n.children,
            });
        }
        if repr.layer_nodes.len() != repr.layers {
            return Err(DartError::Validation("layer count disagrees with layer_nodes".into()));
        }
        for ids in &repr.layer_nodes {
            if ids.iter().any(|&id| id >= nodes.len()) {
                return Err(DartError::Validation("layer_nodes refers to unknown node".into()));
            }
        }
        validate_thresholds(repr.layers, &repr.thresholds)?;
        let tree = AggregationTree {
            m: repr.m,
            max_children: repr.max_children,
            thresholds: repr.thresholds,
            nodes,
            layers: repr.layer_nodes,
        };
        tree.check_invariants(None).map_err(DartError::Validation)?;
        Ok(tree)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn three_feature() -> DistanceMatrix {
        DistanceMatrix::from_rows(
            &[
                vec![0.0, 1.0, 2.0],
                vec![1.0, 0.0, 1.0],
                vec![2.0, 1.0, 0.0],
            ],
            false,
        )
        .unwrap()
    }

    // Seven features arranged so that {1,2} and {3,4,5} are the first
    // aggregates, dist({1},{2}) = 2, dist({1,2},{3,4,5}) = 5.
    fn figure_fixture() -> DistanceMatrix {
        let rows = vec![
            vec![0.0, 2.0, 4.0, 5.0, 4.0, 9.0, 9.0],
            vec![2.0, 0.0, 3.0, 4.0, 5.0, 9.0, 9.0],
            vec![4.0, 3.0, 0.0, 2.5, 2.5, 9.0, 9.0],
            vec![5.0, 4.0, 2.5, 0.0, 2.5, 9.0, 9.0],
            vec![4.0, 5.0, 2.5, 2.5, 0.0, 9.0, 9.0],
            vec![9.0, 9.0, 9.0, 9.0, 9.0, 0.0, 8.0],
            vec![9.0, 9.0, 9.0, 9.0, 9.0, 8.0, 0.0],
        ];
        DistanceMatrix::from_rows(&rows, false).unwrap()
    }

    #[test]
    fn node_distance_examples() {
        let d = figure_fixture();
        assert_eq!(node_dist(&[0], &[1], &d).unwrap(), 2.0);
        assert_eq!(node_dist(&[0, 1], &[2, 3, 4], &d).unwrap(), 5.0);
        assert_eq!(node_dist(&[2, 3, 4], &[0, 1], &d).unwrap(), 5.0);
        assert!(node_dist(&[0, 1], &[1, 2], &d).is_err());
        assert!(node_dist(&[], &[1], &d).is_err());
    }

    #[test]
    fn diameter_examples() {
        let d = figure_fixture();
        assert_eq!(node_diameter(&[3], &d), 0.0);
        assert_eq!(node_diameter(&[0, 1, 2, 3, 4], &d), 5.0);
        let (a, b) = ([0usize, 1], [2usize, 3, 4]);
        let union = [0usize, 1, 2, 3, 4];
        let expect = node_diameter(&a, &d)
            .max(node_diameter(&b, &d))
            .max(node_dist(&a, &b, &d).unwrap());
        assert_eq!(node_diameter(&union, &d), expect);
    }

    #[test]
    fn three_feature_full_merge() {
        let d = three_feature();
        let tree = build_tree(&d, ChildCap::Bounded(3), 2, &[2.0]).unwrap();
        let top: Vec<&Node> = tree.layer(2).collect();
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].features, vec![0, 1, 2]);
        assert_eq!(top[0].children, vec![0, 1, 2]);
        tree.check_invariants(Some(&d)).unwrap();
    }

    #[test]
    fn three_feature_threshold_stops() {
        let d = three_feature();
        let tree = build_tree(&d, ChildCap::Bounded(3), 2, &[1.5]).unwrap();
        let top: Vec<Vec<usize>> = tree.layer(2).map(|n| n.features.clone()).collect();
        assert_eq!(top, vec![vec![0, 1], vec![2]]);
        let carrier = tree.layer(2).nth(1).unwrap();
        assert!(carrier.is_carrier());
        assert_eq!(carrier.children, vec![2]);
    }

    #[test]
    fn single_feature_copies_up() {
        let d = DistanceMatrix::from_rows(&[vec![0.0]], false).unwrap();
        let tree = build_tree(&d, ChildCap::Bounded(3), 3, &[1.0, 2.0]).unwrap();
        for l in 1..=3 {
            let nodes: Vec<&Node> = tree.layer(l).collect();
            assert_eq!(nodes.len(), 1);
            assert_eq!(nodes[0].features, vec![0]);
        }
    }

    #[test]
    fn figure_fixture_first_layer() {
        let d = figure_fixture();
        let (tree, log) = build_tree_logged(&d, ChildCap::Bounded(3), 3, &[3.0, 5.0]).unwrap();
        let l2: Vec<Vec<usize>> = tree.layer(2).map(|n| n.features.clone()).collect();
        assert_eq!(l2, vec![vec![0, 1], vec![2, 3, 4], vec![5], vec![6]]);
        let l3: Vec<Vec<usize>> = tree.layer(3).map(|n| n.features.clone()).collect();
        assert_eq!(l3, vec![vec![0, 1, 2, 3, 4], vec![5], vec![6]]);
        // first merge is the id-ordered closest pair
        assert_eq!(log[0].action, MergeAction::Merge);
        assert_eq!((log[0].node_a, log[0].node_b), (Some(0), Some(1)));
        tree.check_invariants(Some(&d)).unwrap();
    }

    #[test]
    fn cap_two_blocks_third_member() {
        let d = three_feature();
        let (tree, log) = build_tree_logged(&d, ChildCap::Bounded(2), 2, &[2.0]).unwrap();
        let l2: Vec<Vec<usize>> = tree.layer(2).map(|n| n.features.clone()).collect();
        assert_eq!(l2, vec![vec![0, 1], vec![2]]);
        assert!(log.iter().all(|e| e.action != MergeAction::CapInfinity));
    }

    #[test]
    fn cap_exceeded_sets_pair_infinite() {
        // {0,1} and {2,3} form with 2 children each; merging them would
        // give 4 children under M = 3, so that pair is blocked.
        let rows = vec![
            vec![0.0, 1.0, 3.0, 3.0],
            vec![1.0, 0.0, 3.0, 3.0],
            vec![3.0, 3.0, 0.0, 1.0],
            vec![3.0, 3.0, 1.0, 0.0],
        ];
        let d = DistanceMatrix::from_rows(&rows, false).unwrap();
        let (tree, log) = build_tree_logged(&d, ChildCap::Bounded(3), 2, &[3.0]).unwrap();
        let l2: Vec<Vec<usize>> = tree.layer(2).map(|n| n.features.clone()).collect();
        assert_eq!(l2, vec![vec![0, 1], vec![2, 3]]);
        let capped: Vec<&MergeEvent> = log
            .iter()
            .filter(|e| e.action == MergeAction::CapInfinity)
            .collect();
        assert_eq!(capped.len(), 1);
        assert_eq!((capped[0].node_a, capped[0].node_b), (Some(4), Some(5)));
        assert_eq!(log.last().unwrap().action, MergeAction::Stop);

        // with a lone fifth feature the cap comes into play
        let rows = vec![
            vec![0.0, 1.0, 3.0, 3.0, 2.0],
            vec![1.0, 0.0, 3.0, 3.0, 2.0],
            vec![3.0, 3.0, 0.0, 1.0, 3.0],
            vec![3.0, 3.0, 1.0, 0.0, 3.0],
            vec![2.0, 2.0, 3.0, 3.0, 0.0],
        ];
        let d = DistanceMatrix::from_rows(&rows, false).unwrap();
        let tree = build_tree(&d, ChildCap::Bounded(3), 2, &[3.0]).unwrap();
        tree.check_invariants(Some(&d)).unwrap();
        let l2: Vec<Vec<usize>> = tree.layer(2).map(|n| n.features.clone()).collect();
        assert_eq!(l2, vec![vec![0, 1, 4], vec![2, 3]]);
    }

    #[test]
    fn unbounded_cap_merges_everything() {
        let d = figure_fixture();
        let max = d.max_off_diagonal();
        let tree = build_tree(&d, ChildCap::Unbounded, 2, &[max]).unwrap();
        assert_eq!(tree.layer(2).count(), 1);
    }

    #[test]
    fn tiny_threshold_copies_every_layer() {
        let d = figure_fixture();
        let g = d.min_off_diagonal() * 0.5;
        let tree = build_tree(&d, ChildCap::Bounded(3), 3, &[g, g * 1.5]).unwrap();
        for l in 2..=3 {
            assert!(tree.layer(l).all(|n| n.is_carrier()));
            assert_eq!(tree.layer(l).count(), 7);
        }
    }

    #[test]
    fn non_increasing_thresholds_rejected() {
        let d = figure_fixture();
        assert!(build_tree(&d, ChildCap::Bounded(3), 3, &[2.0, 2.0]).is_err());
        assert!(build_tree(&d, ChildCap::Bounded(3), 3, &[2.0]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let d = figure_fixture();
        let tree = build_tree(&d, ChildCap::Unbounded, 3, &[3.0, 5.0]).unwrap();
        let back = AggregationTree::from_json(&tree.to_json().unwrap()).unwrap();
        assert_eq!(tree, back);
    }

    #[test]
    fn merge_distances_non_decreasing() {
        let d = figure_fixture();
        let (_, log) = build_tree_logged(&d, ChildCap::Unbounded, 2, &[8.5]).unwrap();
        let merges: Vec<f64> = log
            .iter()
            .filter(|e| e.action == MergeAction::Merge)
            .map(|e| e.distance)
            .collect();
        assert!(merges.windows(2).all(|w| w[0] <= w[1]));
    }
}
