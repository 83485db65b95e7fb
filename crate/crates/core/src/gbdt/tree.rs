//! Regression trees grown by exact greedy split search on second-order
//! statistics.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        gain: f64,
        cover: f64,
    },
    Leaf {
        value: f64,
        cover: f64,
    },
}

impl Node {
    /// Number of training rows that reached this node.
    pub fn cover(&self) -> f64 {
        match self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => *cover,
        }
    }
}

/// Nodes in creation order; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn leaf(value: f64, cover: f64) -> Self {
        RegressionTree { nodes: vec![Node::Leaf { value, cover }] }
    }

    /// Index of the leaf reached by a row, reading features through `get`.
    pub fn leaf_index(&self, get: impl Fn(usize) -> f64) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split { feature, threshold, left, right, .. } => {
                    i = if get(*feature) < *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn predict(&self, get: impl Fn(usize) -> f64) -> f64 {
        match &self.nodes[self.leaf_index(get)] {
            Node::Leaf { value, .. } => *value,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.predict(|f| row[f])
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Features used by any split.
    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
    }
}

/// Regularization and shape limits for one tree.
#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_depth: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    /// Shrinkage folded into stored leaf values.
    pub eta: f64,
}

/// `sign(g) * max(|g| - alpha, 0)`.
pub fn soft_threshold(g: f64, alpha: f64) -> f64 {
    if g > alpha {
        g - alpha
    } else if g < -alpha {
        g + alpha
    } else {
        0.0
    }
}

/// Structure score `T(G)^2 / (H + lambda)` of a node.
pub fn node_score(g: f64, h: f64, p: &TreeParams) -> f64 {
    let t = soft_threshold(g, p.alpha);
    t * t / (h + p.lambda)
}

/// Loss reduction of splitting `(G, H)` into left/right parts.
pub fn split_gain(gl: f64, hl: f64, g: f64, h: f64, p: &TreeParams) -> f64 {
    let (gr, hr) = (g - gl, h - hl);
    0.5 * (node_score(gl, hl, p) + node_score(gr, hr, p) - node_score(g, h, p)) - p.gamma
}

/// Optimal leaf weight `-T(G) / (H + lambda)`, before shrinkage.
pub fn leaf_weight(g: f64, h: f64, p: &TreeParams) -> f64 {
    -soft_threshold(g, p.alpha) / (h + p.lambda)
}

/// Candidate threshold strictly between consecutive distinct values.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m > lo {
        m
    } else {
        hi
    }
}

/// Row orders of each column, sorted by `(value, row)`.
pub fn presort(x: &FeatureMatrix) -> Vec<Vec<u32>> {
    (0..x.n_cols())
        .into_par_iter()
        .map(|j| {
            let col = x.column(j);
            let mut idx: Vec<u32> = (0..x.n_rows() as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            idx
        })
        .collect()
}

const NO_NODE: u32 = u32::MAX;

struct Open {
    node: usize,
    g: f64,
    h: f64,
    count: usize,
    depth: usize,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    threshold: f64,
}

#[derive(Clone, Copy)]
struct ScanState {
    g: f64,
    h: f64,
    last: f64,
    seen: bool,
    best: Option<Candidate>,
}

/// Grows one tree level by level. `in_sample[r]` selects the rows used;
/// `features` (ascending) are the columns eligible for splitting. Among equal
/// gains the lowest feature index wins, then the lowest threshold.
pub fn grow(
    x: &FeatureMatrix,
    sorted: &[Vec<u32>],
    grad: &[f64],
    hess: &[f64],
    in_sample: &[bool],
    features: &[usize],
    params: &TreeParams,
) -> RegressionTree {
    grow_impl(x, sorted, grad, hess, in_sample, features, params, None)
}

/// [`grow`] with a fresh random subset of `mtry` features drawn for every
/// node. Nodes draw in creation order.
#[allow(clippy::too_many_arguments)]
pub fn grow_subspace(
    x: &FeatureMatrix,
    sorted: &[Vec<u32>],
    grad: &[f64],
    hess: &[f64],
    in_sample: &[bool],
    features: &[usize],
    params: &TreeParams,
    mtry: usize,
    rng: &mut Rng,
) -> RegressionTree {
    grow_impl(x, sorted, grad, hess, in_sample, features, params, Some((mtry, rng)))
}

#[allow(clippy::too_many_arguments)]
fn grow_impl(
    x: &FeatureMatrix,
    sorted: &[Vec<u32>],
    grad: &[f64],
    hess: &[f64],
    in_sample: &[bool],
    features: &[usize],
    params: &TreeParams,
    mut subspace: Option<(usize, &mut Rng)>,
) -> RegressionTree {
    let n = x.n_rows();
    let mut position = vec![NO_NODE; n];
    let (mut g0, mut h0, mut c0) = (0.0, 0.0, 0usize);
    for r in 0..n {
        if in_sample[r] {
            position[r] = 0;
            g0 += grad[r];
            h0 += hess[r];
            c0 += 1;
        }
    }
    let mut nodes: Vec<Node> = vec![Node::Leaf { value: 0.0, cover: c0 as f64 }];
    let mut frontier = vec![Open { node: 0, g: g0, h: h0, count: c0, depth: 0 }];

    while !frontier.is_empty() {
        let (splittable, terminal): (Vec<Open>, Vec<Open>) =
            frontier.into_iter().partition(|o| o.depth < params.max_depth && o.count >= 2);
        for o in &terminal {
            nodes[o.node] = Node::Leaf { value: params.eta * leaf_weight(o.g, o.h, params), cover: o.count as f64 };
        }
        if splittable.is_empty() {
            break;
        }

        let mut slot_of = vec![usize::MAX; nodes.len()];
        for (s, o) in splittable.iter().enumerate() {
            slot_of[o.node] = s;
        }
        let per_feature: Vec<Vec<Option<Candidate>>> = features
            .par_iter()
            .map(|&f| scan_feature(x.column(f), &sorted[f], &position, &slot_of, &splittable, grad, hess, params))
            .collect();

        let allowed: Option<Vec<Vec<bool>>> = subspace.as_mut().map(|(mtry, rng)| {
            splittable
                .iter()
                .map(|_| {
                    let mut mask = vec![false; features.len()];
                    for i in sample(&mut **rng, features.len(), (*mtry).min(features.len())) {
                        mask[i] = true;
                    }
                    mask
                })
                .collect()
        });

        let mut split_of: Vec<Option<(usize, f64, f64)>> = vec![None; splittable.len()];
        for (fi, cands) in per_feature.iter().enumerate() {
            for (s, c) in cands.iter().enumerate() {
                if allowed.as_ref().is_some_and(|a| !a[s][fi]) {
                    continue;
                }
                if let Some(c) = c {
                    let better = match split_of[s] {
                        None => true,
                        Some((_, _, gain)) => c.gain > gain,
                    };
                    if better {
                        split_of[s] = Some((features[fi], c.threshold, c.gain));
                    }
                }
            }
        }

        // Allocate children and route rows.
        let mut child_of = vec![(0usize, 0usize); splittable.len()];
        for (s, o) in splittable.iter().enumerate() {
            match split_of[s] {
                Some((feature, threshold, gain)) => {
                    let left = nodes.len();
                    let right = left + 1;
                    nodes.push(Node::Leaf { value: 0.0, cover: 0.0 });
                    nodes.push(Node::Leaf { value: 0.0, cover: 0.0 });
                    nodes[o.node] = Node::Split { feature, threshold, left, right, gain, cover: o.count as f64 };
                    child_of[s] = (left, right);
                }
                None => {
                    nodes[o.node] =
                        Node::Leaf { value: params.eta * leaf_weight(o.g, o.h, params), cover: o.count as f64 };
                }
            }
        }
        let mut stats = vec![(0.0f64, 0.0f64, 0usize); nodes.len()];
        for r in 0..n {
            let p = position[r];
            if p == NO_NODE {
                continue;
            }
            let s = *slot_of.get(p as usize).unwrap_or(&usize::MAX);
            if s == usize::MAX {
                continue;
            }
            match split_of[s] {
                Some((feature, threshold, _)) => {
                    let (l, rt) = child_of[s];
                    let child = if x.get(r, feature) < threshold { l } else { rt };
                    position[r] = child as u32;
                    let st = &mut stats[child];
                    st.0 += grad[r];
                    st.1 += hess[r];
                    st.2 += 1;
                }
                None => position[r] = NO_NODE,
            }
        }
        frontier = Vec::new();
        for (s, o) in splittable.iter().enumerate() {
            if split_of[s].is_some() {
                let (l, r) = child_of[s];
                for c in [l, r] {
                    let (g, h, count) = stats[c];
                    frontier.push(Open { node: c, g, h, count, depth: o.depth + 1 });
                }
            }
        }
    }
    RegressionTree { nodes }
}

#[allow(clippy::too_many_arguments)]
fn scan_feature(
    col: &[f64],
    order: &[u32],
    position: &[u32],
    slot_of: &[usize],
    open: &[Open],
    grad: &[f64],
    hess: &[f64],
    params: &TreeParams,
) -> Vec<Option<Candidate>> {
    let mut state = vec![ScanState { g: 0.0, h: 0.0, last: 0.0, seen: false, best: None }; open.len()];
    for &r in order {
        let r = r as usize;
        let p = position[r];
        if p == NO_NODE {
            continue;
        }
        let s = match slot_of.get(p as usize) {
            Some(&s) if s != usize::MAX => s,
            _ => continue,
        };
        let v = col[r];
        let st = &mut state[s];
        if st.seen && v != st.last {
            let o = &open[s];
            let hr = o.h - st.h;
            if st.h >= params.min_child_weight && hr >= params.min_child_weight {
                let gain = split_gain(st.g, st.h, o.g, o.h, params);
                if gain > 0.0 && st.best.is_none_or(|b| gain > b.gain) {
                    st.best = Some(Candidate { gain, threshold: midpoint(st.last, v) });
                }
            }
        }
        st.g += grad[r];
        st.h += hess[r];
        st.last = v;
        st.seen = true;
    }
    state.into_iter().map(|s| s.best).collect()
}
