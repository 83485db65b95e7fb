//! Gradient-boosted trees for binary logistic loss.
//!
//! Each round fits a [`RegressionTree`] to the first and second derivatives
//! of the logistic loss at the current margins. Leaf values are stored with
//! the learning rate already applied, so a prediction is the base margin plus
//! the sum of the reached leaf values.

mod grid;
mod tree;

pub use grid::{grid_search, stratified_folds, CellScore, GridResult, GridSpec, SelectionMetric};
pub use tree::{grow, grow_subspace, leaf_weight, midpoint, node_score, presort, soft_threshold, split_gain, Node, RegressionTree, TreeParams};

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::select::ImportanceTrainer;

/// Probabilities are clipped to `[EPS, 1 - EPS]` before taking logs.
pub const LOGLOSS_EPS: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Objective {
    #[default]
    #[serde(rename = "binary-logistic")]
    BinaryLogistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMetric {
    #[default]
    Logloss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub keep_best: bool,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        EarlyStopping { patience: 10, min_delta: 1e-4, keep_best: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub eta: f64,
    pub max_depth: usize,
    pub n_estimators: usize,
    pub subsample: f64,
    pub colsample_bytree: f64,
    /// L1 penalty on leaf weights.
    pub reg_alpha: f64,
    /// L2 penalty on leaf weights.
    pub reg_lambda: f64,
    pub objective: Objective,
    pub eval_metric: EvalMetric,
    pub early_stopping: EarlyStopping,
    pub min_child_weight: f64,
    pub gamma: f64,
    /// Initial probability; ignored when `prevalence_offset` is set.
    pub base_score: f64,
    /// Start from the training prevalence instead of `base_score`.
    pub prevalence_offset: bool,
    /// Train on one-class labels instead of refusing.
    pub allow_single_class: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 0.025,
            max_depth: 7,
            n_estimators: 1000,
            subsample: 0.8,
            colsample_bytree: 0.8,
            reg_alpha: 0.05,
            reg_lambda: 0.08,
            objective: Objective::BinaryLogistic,
            eval_metric: EvalMetric::Logloss,
            early_stopping: EarlyStopping::default(),
            min_child_weight: 1.0,
            gamma: 0.0,
            base_score: 0.5,
            prevalence_offset: false,
            allow_single_class: false,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad(format!("eta {} not in (0, 1]", self.eta));
        }
        if self.max_depth < 1 {
            return bad("max_depth must be >= 1".into());
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad(format!("subsample {} not in (0, 1]", self.subsample));
        }
        if !(self.colsample_bytree > 0.0 && self.colsample_bytree <= 1.0) {
            return bad(format!("colsample_bytree {} not in (0, 1]", self.colsample_bytree));
        }
        if self.early_stopping.patience < 1 {
            return bad("early_stopping.patience must be >= 1".into());
        }
        if !(self.base_score > 0.0 && self.base_score < 1.0) {
            return bad(format!("base_score {} not in (0, 1)", self.base_score));
        }
        if self.reg_alpha < 0.0 || self.reg_lambda < 0.0 || self.gamma < 0.0 || self.min_child_weight < 0.0 {
            return bad("regularization terms must be non-negative".into());
        }
        Ok(())
    }

    pub fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            lambda: self.reg_lambda,
            alpha: self.reg_alpha,
            gamma: self.gamma,
            min_child_weight: self.min_child_weight,
            eta: self.eta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub base_score: f64,
    /// Log-odds of `base_score`.
    pub base_margin: f64,
    pub trees: Vec<RegressionTree>,
    /// Round with the lowest eval loss, when an eval set was given.
    pub best_iteration: Option<usize>,
    pub feature_names: Vec<String>,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub train_logloss: Vec<f64>,
    pub eval_logloss: Vec<f64>,
    pub best_iteration: Option<usize>,
    pub stopped_early: bool,
    pub rounds: usize,
}

pub fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Per-sample logistic loss `ln(1 + e^m) - y m`, computed stably.
pub fn logistic_loss(margin: f64, y: f64) -> f64 {
    let softplus = if margin > 0.0 { margin + (-margin).exp().ln_1p() } else { margin.exp().ln_1p() };
    softplus - y * margin
}

/// First and second derivatives of [`logistic_loss`] in the margin.
pub fn logistic_grad_hess(margin: f64, y: f64) -> (f64, f64) {
    let p = sigmoid(margin);
    (p - y, p * (1.0 - p))
}

/// Mean negative log-likelihood with probabilities clipped at [`LOGLOSS_EPS`].
pub fn logloss(y: &[u8], p: &[f64]) -> Result<f64> {
    if y.len() != p.len() {
        return Err(Error::InvalidArgument(format!("{} labels but {} predictions", y.len(), p.len())));
    }
    if y.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let total: f64 = y
        .iter()
        .zip(p)
        .map(|(&yi, &pi)| {
            let pi = pi.clamp(LOGLOSS_EPS, 1.0 - LOGLOSS_EPS);
            if yi == 1 {
                -pi.ln()
            } else {
                -(1.0 - pi).ln()
            }
        })
        .sum();
    Ok(total / y.len() as f64)
}

fn check_labels(y: &[u8], context: &str) -> Result<()> {
    if y.iter().any(|&v| v > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass(context.to_string()));
    }
    Ok(())
}

/// Aligns `x` to `names`, failing on any absent column.
fn aligned(x: &FeatureMatrix, names: &[String]) -> Result<FeatureMatrix> {
    if x.names() == names {
        return Ok(x.clone());
    }
    for n in names {
        if x.column_index(n).is_none() {
            return Err(Error::Model(format!("feature `{n}` is missing from the input")));
        }
    }
    x.select_columns(names)
}

/// Fits an ensemble. With `eval`, the eval logloss drives early stopping.
pub fn train(
    x: &FeatureMatrix,
    y: &[u8],
    config: &TrainConfig,
    eval: Option<(&FeatureMatrix, &[u8])>,
) -> Result<(Ensemble, TrainTrace)> {
    config.validate()?;
    let n = x.n_rows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if y.len() != n {
        return Err(Error::InvalidArgument(format!("{n} rows but {} labels", y.len())));
    }
    if !config.allow_single_class {
        check_labels(y, "training labels")?;
    } else if y.iter().any(|&v| v > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    x.check_finite()?;
    let eval = match eval {
        Some((ex, ey)) => {
            if ey.len() != ex.n_rows() {
                return Err(Error::InvalidArgument("eval set rows and labels differ".into()));
            }
            let ex = aligned(ex, x.names())?;
            ex.check_finite()?;
            Some((ex, ey))
        }
        None => None,
    };

    let base_score = if config.prevalence_offset {
        (y.iter().map(|&v| v as f64).sum::<f64>() / n as f64).clamp(LOGLOSS_EPS, 1.0 - LOGLOSS_EPS)
    } else {
        config.base_score
    };
    let base_margin = logit(base_score);
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let sorted = presort(x);
    let params = config.tree_params();
    let d = x.n_cols();
    let n_rows_sampled = ((n as f64 * config.subsample).round() as usize).clamp(1, n);
    let n_cols_sampled = ((d as f64 * config.colsample_bytree).round() as usize).clamp(1, d);
    let root = Rng::new(config.seed);

    let mut margin = vec![base_margin; n];
    let mut eval_margin = eval.as_ref().map(|(ex, _)| vec![base_margin; ex.n_rows()]);
    let mut trees = Vec::new();
    let mut trace = TrainTrace::default();
    let mut best: Option<(usize, f64)> = None;
    let mut last_significant = (0usize, f64::INFINITY);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];

    for round in 0..config.n_estimators {
        grad.par_iter_mut()
            .zip(hess.par_iter_mut())
            .enumerate()
            .for_each(|(i, (g, h))| (*g, *h) = logistic_grad_hess(margin[i], yf[i]));

        let mut rng = root.derive(round as u64);
        let mut in_sample = vec![n_rows_sampled == n; n];
        if n_rows_sampled < n {
            for i in sample(&mut rng, n, n_rows_sampled) {
                in_sample[i] = true;
            }
        }
        let features: Vec<usize> = if n_cols_sampled < d {
            let mut f = sample(&mut rng, d, n_cols_sampled).into_vec();
            f.sort_unstable();
            f
        } else {
            (0..d).collect()
        };

        let tree = grow(x, &sorted, &grad, &hess, &in_sample, &features, &params);
        margin.par_iter_mut().enumerate().for_each(|(i, m)| *m += tree.predict(|f| x.get(i, f)));
        trace.train_logloss.push(mean_loss(&margin, &yf));

        let mut stop = false;
        if let (Some((ex, ey)), Some(em)) = (eval.as_ref(), eval_margin.as_mut()) {
            em.par_iter_mut().enumerate().for_each(|(i, m)| *m += tree.predict(|f| ex.get(i, f)));
            let p: Vec<f64> = em.iter().map(|&m| sigmoid(m)).collect();
            let loss = logloss(ey, &p)?;
            trace.eval_logloss.push(loss);
            if best.is_none_or(|(_, b)| loss < b) {
                best = Some((round, loss));
            }
            if loss <= last_significant.1 - config.early_stopping.min_delta {
                last_significant = (round, loss);
            }
            stop = round - last_significant.0 >= config.early_stopping.patience;
        }
        trees.push(tree);
        trace.rounds = round + 1;
        if stop {
            trace.stopped_early = true;
            break;
        }
    }

    let best_iteration = best.map(|(r, _)| r);
    if config.early_stopping.keep_best {
        if let Some(b) = best_iteration {
            trees.truncate(b + 1);
        }
    }
    trace.best_iteration = best_iteration;
    Ok((
        Ensemble {
            base_score,
            base_margin,
            trees,
            best_iteration,
            feature_names: x.names().to_vec(),
            config: config.clone(),
        },
        trace,
    ))
}

fn mean_loss(margin: &[f64], y: &[f64]) -> f64 {
    margin.iter().zip(y).map(|(&m, &yi)| logistic_loss(m, yi)).sum::<f64>() / y.len() as f64
}

impl Ensemble {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Margins using the first `n_trees` trees.
    pub fn predict_margin_limit(&self, x: &FeatureMatrix, n_trees: usize) -> Result<Vec<f64>> {
        let x = aligned(x, &self.feature_names)?;
        let trees = &self.trees[..n_trees.min(self.trees.len())];
        Ok((0..x.n_rows())
            .into_par_iter()
            .map(|i| self.base_margin + trees.iter().map(|t| t.predict(|f| x.get(i, f))).sum::<f64>())
            .collect())
    }

    pub fn predict_margin(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        self.predict_margin_limit(x, self.trees.len())
    }

    pub fn predict_proba(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(self.predict_margin(x)?.into_iter().map(sigmoid).collect())
    }

    pub fn margin_row(&self, row: &[f64]) -> f64 {
        self.base_margin + self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    /// Total split gain per feature.
    pub fn gain_importance(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.n_features()];
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

/// Importance source for feature elimination: a fitted ensemble's total gain.
#[derive(Debug, Clone)]
pub struct GbdtImportance {
    pub config: TrainConfig,
}

impl Default for GbdtImportance {
    fn default() -> Self {
        GbdtImportance {
            config: TrainConfig { eta: 0.1, max_depth: 3, n_estimators: 100, ..TrainConfig::default() },
        }
    }
}

impl ImportanceTrainer for GbdtImportance {
    fn describe(&self) -> String {
        format!(
            "gbdt(eta={}, max_depth={}, n_estimators={}, importance=total_gain)",
            self.config.eta, self.config.max_depth, self.config.n_estimators
        )
    }

    fn importances(&self, x: &FeatureMatrix, y: &[u8]) -> Result<Vec<f64>> {
        let (model, _) = train(x, y, &self.config, None)?;
        Ok(model.gain_importance())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_configuration() {
        let c = TrainConfig::default();
        assert_eq!(c.eta, 0.025);
        assert_eq!(c.max_depth, 7);
        assert_eq!(c.n_estimators, 1000);
        assert_eq!(c.subsample, 0.8);
        assert_eq!(c.colsample_bytree, 0.8);
        assert_eq!(c.reg_alpha, 0.05);
        assert_eq!(c.early_stopping.patience, 10);
        assert_eq!(c.seed, 42);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), c);
    }

    #[test]
    fn sigmoid_and_logloss_closed_forms() {
        assert_eq!(sigmoid(0.0), 0.5);
        let l = logloss(&[0, 1, 1], &[0.5; 3]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(logloss(&[0, 1], &[0.0, 1.0]).unwrap() <= 1e-14);
        assert!(logloss(&[0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn empty_ensemble_predicts_base_score() {
        let x = FeatureMatrix::from_columns(vec!["a".into()], vec![vec![1.0, 2.0]]).unwrap();
        let e = Ensemble {
            base_score: 0.5,
            base_margin: 0.0,
            trees: vec![],
            best_iteration: None,
            feature_names: vec!["a".into()],
            config: TrainConfig::default(),
        };
        assert_eq!(e.predict_proba(&x).unwrap(), vec![0.5, 0.5]);
        let wrong = FeatureMatrix::from_columns(vec!["b".into()], vec![vec![1.0]]).unwrap();
        assert!(e.predict_margin(&wrong).is_err());
    }

    #[test]
    fn refuses_single_class() {
        let x = FeatureMatrix::from_columns(vec!["a".into()], vec![vec![1.0, 2.0]]).unwrap();
        assert!(matches!(train(&x, &[0, 0], &TrainConfig::default(), None), Err(Error::SingleClass(_))));
    }
}
