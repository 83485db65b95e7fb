//! Exact path-dependent Shapley values for tree ensembles.
//!
//! Missing features follow both branches of a split, weighted by the
//! training cover of each child. The per-tree recursion tracks, for every
//! feature on the current path, the share of subsets in which it is present
//! and the share of cover that flows through when it is absent.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::gbdt::{Ensemble, Node, RegressionTree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    /// One value per ensemble feature, in margin units.
    pub phi: Vec<f64>,
    pub base_value: f64,
    pub prediction_margin: f64,
}

#[derive(Clone, Copy, Debug)]
struct PathElem {
    feature: usize,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElem>, zero: f64, one: f64, feature: usize) {
    let l = path.len();
    path.push(PathElem { feature, zero, one, weight: if l == 0 { 1.0 } else { 0.0 } });
    for i in (0..l).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / (l + 1) as f64;
        path[i].weight = zero * path[i].weight * (l - i) as f64 / (l + 1) as f64;
    }
}

fn unwind(path: &mut Vec<PathElem>, index: usize) {
    let l = path.len() - 1;
    let PathElem { one, zero, .. } = path[index];
    let mut next = path[l].weight;
    for j in (0..l).rev() {
        if one != 0.0 {
            let t = path[j].weight;
            path[j].weight = next * (l + 1) as f64 / ((j + 1) as f64 * one);
            next = t - path[j].weight * zero * (l - j) as f64 / (l + 1) as f64;
        } else {
            path[j].weight = path[j].weight * (l + 1) as f64 / (zero * (l - j) as f64);
        }
    }
    for j in index..l {
        path[j].feature = path[j + 1].feature;
        path[j].zero = path[j + 1].zero;
        path[j].one = path[j + 1].one;
    }
    path.pop();
}

/// Total weight of the path with element `index` removed.
fn unwound_sum(path: &[PathElem], index: usize) -> f64 {
    let l = path.len() - 1;
    let PathElem { one, zero, .. } = path[index];
    let mut next = path[l].weight;
    let mut total = 0.0;
    for j in (0..l).rev() {
        if one != 0.0 {
            let t = next / ((j + 1) as f64 * one);
            total += t;
            next = path[j].weight - t * zero * (l - j) as f64;
        } else {
            total += path[j].weight / (zero * (l - j) as f64);
        }
    }
    total * (l + 1) as f64
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    tree: &RegressionTree,
    row: &[f64],
    phi: &mut [f64],
    node: usize,
    mut path: Vec<PathElem>,
    zero: f64,
    one: f64,
    feature: usize,
) {
    extend(&mut path, zero, one, feature);
    match &tree.nodes[node] {
        Node::Leaf { value, .. } => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                phi[path[i].feature] += w * (path[i].one - path[i].zero) * value;
            }
        }
        Node::Split { feature: f, threshold, left, right, cover, .. } => {
            let (hot, cold) = if row[*f] < *threshold { (*left, *right) } else { (*right, *left) };
            let hot_zero = tree.nodes[hot].cover() / cover;
            let cold_zero = tree.nodes[cold].cover() / cover;
            let (mut in_zero, mut in_one) = (1.0, 1.0);
            if let Some(k) = (1..path.len()).find(|&k| path[k].feature == *f) {
                in_zero = path[k].zero;
                in_one = path[k].one;
                unwind(&mut path, k);
            }
            recurse(tree, row, phi, hot, path.clone(), hot_zero * in_zero, in_one, *f);
            recurse(tree, row, phi, cold, path, cold_zero * in_zero, 0.0, *f);
        }
    }
}

/// Cover-weighted mean output of a tree.
pub fn tree_expectation(tree: &RegressionTree) -> f64 {
    fn walk(tree: &RegressionTree, i: usize) -> f64 {
        match &tree.nodes[i] {
            Node::Leaf { value, .. } => *value,
            Node::Split { left, right, cover, .. } => {
                (tree.nodes[*left].cover() * walk(tree, *left) + tree.nodes[*right].cover() * walk(tree, *right))
                    / cover
            }
        }
    }
    walk(tree, 0)
}

/// Adds one tree's attributions for `row` into `phi`.
pub fn tree_shap_single(tree: &RegressionTree, row: &[f64], phi: &mut [f64]) {
    let depth = tree.depth();
    recurse(tree, row, phi, 0, Vec::with_capacity(depth + 2), 1.0, 1.0, usize::MAX);
}

fn check_covers(ensemble: &Ensemble) -> Result<()> {
    for (t, tree) in ensemble.trees.iter().enumerate() {
        if tree.nodes.iter().any(|n| !(n.cover() > 0.0)) {
            return Err(Error::Model(format!("tree {t} lacks training cover counts")));
        }
    }
    Ok(())
}

/// Base value of the ensemble: base margin plus every tree's expectation.
pub fn base_value(ensemble: &Ensemble) -> f64 {
    ensemble.base_margin + ensemble.trees.iter().map(tree_expectation).sum::<f64>()
}

/// Attribution of a single row given in ensemble feature order.
pub fn tree_shap(ensemble: &Ensemble, row: &[f64]) -> Result<Attribution> {
    if row.len() != ensemble.n_features() {
        return Err(Error::InvalidArgument(format!(
            "row has {} values but the model has {} features",
            row.len(),
            ensemble.n_features()
        )));
    }
    check_covers(ensemble)?;
    Ok(attribute(ensemble, row, base_value(ensemble)))
}

fn attribute(ensemble: &Ensemble, row: &[f64], base: f64) -> Attribution {
    let mut phi = vec![0.0; row.len()];
    for tree in &ensemble.trees {
        if tree.nodes.len() > 1 {
            tree_shap_single(tree, row, &mut phi);
        }
    }
    Attribution { phi, base_value: base, prediction_margin: ensemble.margin_row(row) }
}

/// Attributions for every row of `x`, aligned to the ensemble's features.
pub fn shap_matrix(ensemble: &Ensemble, x: &FeatureMatrix) -> Result<Vec<Attribution>> {
    let x = x.select_columns(&ensemble.feature_names).map_err(|_| {
        Error::Model("input columns do not cover the model's features".into())
    })?;
    check_covers(ensemble)?;
    let base = base_value(ensemble);
    Ok((0..x.n_rows()).into_par_iter().map(|i| attribute(ensemble, &x.row(i), base)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRank {
    pub feature: String,
    pub mean_abs_phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalImportance {
    /// Descending mean |phi|, ties by name.
    pub ranking: Vec<FeatureRank>,
    pub attributions: Vec<Attribution>,
    pub feature_names: Vec<String>,
    /// Feature values in ensemble order, one row per attribution.
    pub values: FeatureMatrix,
}

pub fn global_importance(ensemble: &Ensemble, x: &FeatureMatrix) -> Result<GlobalImportance> {
    if x.n_rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let attributions = shap_matrix(ensemble, x)?;
    let n = attributions.len() as f64;
    let mut ranking: Vec<FeatureRank> = ensemble
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, f)| FeatureRank {
            feature: f.clone(),
            mean_abs_phi: attributions.iter().map(|a| a.phi[j].abs()).sum::<f64>() / n,
        })
        .collect();
    ranking.sort_by(|a, b| b.mean_abs_phi.total_cmp(&a.mean_abs_phi).then_with(|| a.feature.cmp(&b.feature)));
    Ok(GlobalImportance {
        ranking,
        attributions,
        feature_names: ensemble.feature_names.clone(),
        values: x.select_columns(&ensemble.feature_names)?,
    })
}

impl GlobalImportance {
    /// CSV `row_id,feature,phi,feature_value`, one line per (row, feature).
    pub fn write_attributions<W: Write>(&self, row_ids: &[String], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row_id", "feature", "phi", "feature_value"])?;
        for (i, a) in self.attributions.iter().enumerate() {
            for (j, f) in self.feature_names.iter().enumerate() {
                w.write_record([&row_ids[i], f, &a.phi[j].to_string(), &self.values.get(i, j).to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("attributions csv", e))?;
        Ok(())
    }

    /// CSV `feature,mean_abs_phi` in rank order.
    pub fn write_ranking<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature", "mean_abs_phi"])?;
        for r in &self.ranking {
            w.write_record([&r.feature, &r.mean_abs_phi.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("ranking csv", e))?;
        Ok(())
    }

    /// CSV `row_id,feature,phi,standardized_value` for beeswarm plots. Values
    /// are z-scored within the explained rows; constant columns map to 0.
    pub fn write_beeswarm<W: Write>(&self, row_ids: &[String], writer: W) -> Result<()> {
        let n = self.values.n_rows() as f64;
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row_id", "feature", "phi", "standardized_value"])?;
        for (j, f) in self.feature_names.iter().enumerate() {
            let col = self.values.column(j);
            let m = col.iter().sum::<f64>() / n;
            let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            for (i, a) in self.attributions.iter().enumerate() {
                let z = if sd > 0.0 { (col[i] - m) / sd } else { 0.0 };
                w.write_record([&row_ids[i], f, &a.phi[j].to_string(), &z.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("beeswarm csv", e))?;
        Ok(())
    }
}
