//! Bagged classification trees with random feature subsets.
//!
//! Trees come from the boosting tree grower. With gradients `-c*y`, hessians
//! `c` (bootstrap multiplicities) and no regularization, a split's gain is
//! half the drop in weighted sum of squares, which for 0/1 labels is
//! proportional to the gini decrease, and each leaf holds the positive share
//! of its rows.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::gbdt::{grow_subspace, presort, Node, RegressionTree, TreeParams};
use crate::rng::Rng;
use crate::select::ImportanceTrainer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Minimum bootstrap-weighted rows per leaf.
    pub min_samples_leaf: f64,
    /// Features tried per split; `None` means `round(sqrt(d))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 500, max_depth: 8, min_samples_leaf: 5.0, max_features: None, bootstrap: true, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub feature_names: Vec<String>,
    pub trees: Vec<RegressionTree>,
    pub tree_seeds: Vec<u64>,
    pub max_features: usize,
    pub config: ForestConfig,
    /// Out-of-bag positive share per training row; `None` where a row was in
    /// every bootstrap sample.
    #[serde(skip)]
    pub oob: Vec<Option<f64>>,
}

pub fn train_forest(x: &FeatureMatrix, y: &[u8], config: &ForestConfig) -> Result<ForestModel> {
    let n = x.n_rows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if y.len() != n {
        return Err(Error::InvalidArgument("rows and labels differ".into()));
    }
    if config.n_trees == 0 || config.max_depth == 0 {
        return Err(Error::InvalidArgument("need n_trees >= 1 and max_depth >= 1".into()));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == n {
        return Err(Error::SingleClass("forest training labels".into()));
    }
    x.check_finite()?;
    let d = x.n_cols();
    let mtry = config.max_features.unwrap_or_else(|| ((d as f64).sqrt().round() as usize).max(1)).clamp(1, d);
    let sorted = presort(x);
    let params = TreeParams {
        max_depth: config.max_depth,
        lambda: 0.0,
        alpha: 0.0,
        gamma: 0.0,
        min_child_weight: config.min_samples_leaf,
        eta: 1.0,
    };
    let root = Rng::new(config.seed);
    let features: Vec<usize> = (0..d).collect();

    let grown: Vec<(RegressionTree, Vec<u32>, u64)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = root.derive(t as u64);
            let tree_seed = rng.seed();
            let mut counts = vec![0u32; n];
            if config.bootstrap {
                for _ in 0..n {
                    counts[rng.random_range(0..n)] += 1;
                }
            } else {
                counts.fill(1);
            }
            let hess: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            let grad: Vec<f64> = (0..n).map(|i| -hess[i] * y[i] as f64).collect();
            let in_sample: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
            let tree = grow_subspace(x, &sorted, &grad, &hess, &in_sample, &features, &params, mtry, &mut rng);
            (tree, counts, tree_seed)
        })
        .collect();

    let mut oob_sum = vec![0.0; n];
    let mut oob_count = vec![0usize; n];
    for (tree, counts, _) in &grown {
        for i in 0..n {
            if counts[i] == 0 {
                oob_sum[i] += tree.predict(|f| x.get(i, f));
                oob_count[i] += 1;
            }
        }
    }
    let oob = (0..n).map(|i| (oob_count[i] > 0).then(|| oob_sum[i] / oob_count[i] as f64)).collect();
    let (trees, tree_seeds) = grown.into_iter().map(|(t, _, s)| (t, s)).unzip();
    Ok(ForestModel { feature_names: x.names().to_vec(), trees, tree_seeds, max_features: mtry, config: config.clone(), oob })
}

impl ForestModel {
    pub fn proba_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict_proba(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        let x = x.select_columns(&self.feature_names)?;
        Ok((0..x.n_rows())
            .into_par_iter()
            .map(|i| self.trees.iter().map(|t| t.predict(|f| x.get(i, f))).sum::<f64>() / self.trees.len() as f64)
            .collect())
    }

    /// Total weighted impurity decrease per feature.
    pub fn importance(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.feature_names.len()];
        for tree in &self.trees {
            for node in &tree.nodes {
                if let Node::Split { feature, gain, .. } = node {
                    imp[*feature] += gain;
                }
            }
        }
        imp
    }
}

#[derive(Debug, Clone)]
pub struct ForestImportance {
    pub config: ForestConfig,
}

impl Default for ForestImportance {
    fn default() -> Self {
        ForestImportance { config: ForestConfig { n_trees: 100, ..ForestConfig::default() } }
    }
}

impl ImportanceTrainer for ForestImportance {
    fn describe(&self) -> String {
        format!("forest(n_trees={}, max_depth={}, importance=gini_decrease)", self.config.n_trees, self.config.max_depth)
    }

    fn importances(&self, x: &FeatureMatrix, y: &[u8]) -> Result<Vec<f64>> {
        Ok(train_forest(x, y, &self.config)?.importance())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaves_hold_positive_share() {
        let x = FeatureMatrix::from_columns(vec!["a".into()], vec![vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]]).unwrap();
        let y = [0, 0, 1, 1, 1, 1];
        let cfg = ForestConfig { n_trees: 1, bootstrap: false, min_samples_leaf: 1.0, ..Default::default() };
        let f = train_forest(&x, &y, &cfg).unwrap();
        let p = f.predict_proba(&x).unwrap();
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(p[5], 1.0);
    }

    #[test]
    fn tree_order_does_not_matter() {
        let xs: Vec<f64> = (0..60).map(|i| ((i * 37) % 60) as f64).collect();
        let y: Vec<u8> = xs.iter().map(|&v| (v > 25.0) as u8).collect();
        let x = FeatureMatrix::from_columns(vec!["a".into()], vec![xs]).unwrap();
        let mut f = train_forest(&x, &y, &ForestConfig { n_trees: 7, ..Default::default() }).unwrap();
        let a = f.predict_proba(&x).unwrap();
        f.trees.reverse();
        let b = f.predict_proba(&x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
