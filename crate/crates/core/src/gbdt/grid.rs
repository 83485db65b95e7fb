//! Cross-validated search over learning rate, depth and tree count.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{logloss, sigmoid, train, TrainConfig};
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::eval::auroc;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMetric {
    #[default]
    Auroc,
    Logloss,
}

impl SelectionMetric {
    fn higher_is_better(self) -> bool {
        matches!(self, SelectionMetric::Auroc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub eta: Vec<f64>,
    pub max_depth: Vec<usize>,
    pub n_estimators: Vec<usize>,
    /// Everything else is taken from here.
    pub base: TrainConfig,
    pub metric: SelectionMetric,
    pub folds: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            eta: vec![0.01, 0.025, 0.05],
            max_depth: vec![3, 5, 7],
            n_estimators: vec![300, 600, 1000],
            base: TrainConfig::default(),
            metric: SelectionMetric::Auroc,
            folds: 5,
        }
    }
}

impl GridSpec {
    pub fn n_cells(&self) -> usize {
        self.eta.len() * self.max_depth.len() * self.n_estimators.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub eta: f64,
    pub max_depth: usize,
    pub n_estimators: usize,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: TrainConfig,
    pub metric: SelectionMetric,
    pub folds: usize,
    /// In grid order: eta outermost, then depth, then tree count.
    pub cells: Vec<CellScore>,
}

/// Fold id per row. Each class is shuffled and dealt round-robin.
pub fn stratified_folds(y: &[u8], k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut fold = vec![0; y.len()];
    for class in [0u8, 1] {
        let mut rows: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        rows.shuffle(rng);
        for (j, r) in rows.into_iter().enumerate() {
            fold[r] = j % k;
        }
    }
    fold
}

/// Scores every grid cell by stratified k-fold cross-validation. Early
/// stopping is off inside the folds; each `(eta, depth, fold)` is trained once
/// at the largest tree count and the smaller counts are read off as prefixes.
pub fn grid_search(x: &FeatureMatrix, y: &[u8], grid: &GridSpec, rng: &mut Rng) -> Result<GridResult> {
    if grid.n_cells() == 0 {
        return Err(Error::InvalidArgument("empty hyperparameter grid".into()));
    }
    if grid.folds < 2 {
        return Err(Error::InvalidArgument("grid search needs at least 2 folds".into()));
    }
    if y.len() != x.n_rows() {
        return Err(Error::InvalidArgument("rows and labels differ".into()));
    }
    let k = grid.folds;
    let fold = stratified_folds(y, k, rng);
    let parts: Vec<(Vec<usize>, Vec<usize>)> = (0..k)
        .map(|f| {
            let (val, tr): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| fold[i] == f);
            (tr, val)
        })
        .collect();
    for (f, (tr, val)) in parts.iter().enumerate() {
        for (rows, what) in [(tr, "training"), (val, "validation")] {
            let pos = rows.iter().filter(|&&i| y[i] == 1).count();
            if pos == 0 || pos == rows.len() {
                return Err(Error::SingleClass(format!("fold {f} {what} part")));
            }
        }
    }

    let max_trees = *grid.n_estimators.iter().max().unwrap();
    let jobs: Vec<(usize, usize, usize)> = (0..grid.eta.len())
        .flat_map(|e| (0..grid.max_depth.len()).flat_map(move |d| (0..k).map(move |f| (e, d, f))))
        .collect();
    // scores[job][tree-count index]
    let scores: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(e, d, f)| {
            let config = TrainConfig {
                eta: grid.eta[e],
                max_depth: grid.max_depth[d],
                n_estimators: max_trees,
                ..grid.base.clone()
            };
            let (tr, val) = &parts[f];
            let xt = x.select_rows(tr);
            let yt: Vec<u8> = tr.iter().map(|&i| y[i]).collect();
            let xv = x.select_rows(val);
            let yv: Vec<u8> = val.iter().map(|&i| y[i]).collect();
            let (model, _) = train(&xt, &yt, &config, None)?;
            grid.n_estimators
                .iter()
                .map(|&m| {
                    let margin = model.predict_margin_limit(&xv, m)?;
                    match grid.metric {
                        SelectionMetric::Auroc => auroc(&margin, &yv),
                        SelectionMetric::Logloss => {
                            logloss(&yv, &margin.iter().map(|&v| sigmoid(v)).collect::<Vec<_>>())
                        }
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::with_capacity(grid.n_cells());
    for (e, &eta) in grid.eta.iter().enumerate() {
        for (d, &max_depth) in grid.max_depth.iter().enumerate() {
            for (m, &n_estimators) in grid.n_estimators.iter().enumerate() {
                let fold_scores: Vec<f64> = (0..k)
                    .map(|f| scores[(e * grid.max_depth.len() + d) * k + f][m])
                    .collect();
                let mean = fold_scores.iter().sum::<f64>() / k as f64;
                cells.push(CellScore { eta, max_depth, n_estimators, fold_scores, mean });
            }
        }
    }

    let sign = if grid.metric.higher_is_better() { 1.0 } else { -1.0 };
    let best = cells
        .iter()
        .min_by(|a, b| {
            (sign * b.mean)
                .total_cmp(&(sign * a.mean))
                .then(a.n_estimators.cmp(&b.n_estimators))
                .then(a.max_depth.cmp(&b.max_depth))
                .then(b.eta.total_cmp(&a.eta))
        })
        .unwrap();
    let best = TrainConfig {
        eta: best.eta,
        max_depth: best.max_depth,
        n_estimators: best.n_estimators,
        ..grid.base.clone()
    };
    Ok(GridResult { best, metric: grid.metric, folds: k, cells })
}
