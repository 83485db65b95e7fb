//! L2-penalized logistic regression fitted by Newton's method.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::gbdt::{logistic_loss, sigmoid};
use crate::select::ImportanceTrainer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    /// Penalty `l2/2 * |w|^2` added to the summed loss; the intercept is free.
    pub l2: f64,
    /// Stop when the gradient norm divided by the row count falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig { l2: 1.0, tol: 1e-10, max_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub feature_names: Vec<String>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Coefficients on standardized features.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub config: LogisticConfig,
    /// Penalized objective after each iteration, starting from the zero model.
    pub objective_trace: Vec<f64>,
    pub grad_norm: f64,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn standardize(x: &FeatureMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.n_rows() as f64;
    (0..x.n_cols())
        .map(|j| {
            let col = x.column(j);
            let m = col.iter().sum::<f64>() / n;
            let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            (m, if sd > 0.0 { sd } else { 1.0 })
        })
        .unzip()
}

/// Design matrix with a leading column of ones.
fn design(x: &FeatureMatrix, mean: &[f64], scale: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.n_rows(), x.n_cols() + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            (x.get(i, j - 1) - mean[j - 1]) / scale[j - 1]
        }
    })
}

/// Penalized objective: summed logistic loss plus `l2/2 |w|^2`, intercept
/// unpenalized. `beta[0]` is the intercept.
pub fn objective(z: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, l2: f64) -> f64 {
    let margin = z * beta;
    let loss: f64 = margin.iter().zip(y).map(|(&m, &yi)| logistic_loss(m, yi)).sum();
    loss + 0.5 * l2 * beta.rows(1, beta.len() - 1).norm_squared()
}

pub fn gradient(z: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, l2: f64) -> DVector<f64> {
    let margin = z * beta;
    let r = DVector::from_iterator(y.len(), margin.iter().zip(y).map(|(&m, &yi)| sigmoid(m) - yi));
    let mut g = z.transpose() * r;
    for j in 1..g.len() {
        g[j] += l2 * beta[j];
    }
    g
}

pub fn train_logistic(x: &FeatureMatrix, y: &[u8], config: &LogisticConfig) -> Result<LogisticModel> {
    if x.n_rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if y.len() != x.n_rows() {
        return Err(Error::InvalidArgument("rows and labels differ".into()));
    }
    if config.l2 < 0.0 || config.max_iter == 0 {
        return Err(Error::InvalidArgument("need l2 >= 0 and max_iter >= 1".into()));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass("logistic training labels".into()));
    }
    x.check_finite()?;
    let (mean, scale) = standardize(x);
    let z = design(x, &mean, &scale);
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let n = x.n_rows() as f64;
    let p = z.ncols();

    let mut beta = DVector::zeros(p);
    let mut obj = objective(&z, &yf, &beta, config.l2);
    let mut trace = vec![obj];
    let mut grad = gradient(&z, &yf, &beta, config.l2);
    let mut converged = grad.norm() / n <= config.tol;
    let mut warnings = Vec::new();

    for _ in 0..config.max_iter {
        if converged {
            break;
        }
        let margin = &z * &beta;
        let w: Vec<f64> = margin.iter().map(|&m| {
            let q = sigmoid(m);
            q * (1.0 - q)
        }).collect();
        let mut h = DMatrix::zeros(p, p);
        for i in 0..z.nrows() {
            let row = z.row(i);
            h.syger(w[i], &row.transpose(), &row.transpose(), 1.0);
        }
        for j in 1..p {
            h[(j, j)] += config.l2;
        }
        // Keeps the system solvable when a column is constant and l2 = 0.
        for j in 0..p {
            h[(j, j)] += 1e-12 * n;
        }
        let step = h
            .cholesky()
            .ok_or_else(|| Error::Numeric("logistic Hessian is not positive definite".into()))?
            .solve(&grad);

        let mut t = 1.0;
        let slope = grad.dot(&step);
        let mut accepted = false;
        for _ in 0..50 {
            let cand = &beta - t * &step;
            let cand_obj = objective(&z, &yf, &cand, config.l2);
            if cand_obj <= obj - 1e-4 * t * slope {
                beta = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No representable descent left; the current point is optimal to
            // working precision.
            break;
        }
        trace.push(obj);
        grad = gradient(&z, &yf, &beta, config.l2);
        converged = grad.norm() / n <= config.tol;
    }
    let grad_norm = grad.norm() / n;
    if !converged {
        warnings.push(format!(
            "did not reach tol {} within {} iterations (gradient norm {grad_norm:e})",
            config.tol, config.max_iter
        ));
    }
    Ok(LogisticModel {
        feature_names: x.names().to_vec(),
        mean,
        scale,
        weights: beta.iter().skip(1).copied().collect(),
        intercept: beta[0],
        config: *config,
        objective_trace: trace,
        grad_norm,
        converged,
        warnings,
    })
}

impl LogisticModel {
    pub fn margin_row(&self, row: &[f64]) -> f64 {
        self.intercept
            + row
                .iter()
                .zip(&self.weights)
                .enumerate()
                .map(|(j, (&v, &w))| w * (v - self.mean[j]) / self.scale[j])
                .sum::<f64>()
    }

    pub fn predict_proba(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        let x = x.select_columns(&self.feature_names)?;
        Ok((0..x.n_rows()).map(|i| sigmoid(self.margin_row(&x.row(i)))).collect())
    }

    /// Absolute standardized coefficients.
    pub fn importance(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.abs()).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct LogisticImportance {
    pub config: LogisticConfig,
}

impl ImportanceTrainer for LogisticImportance {
    fn describe(&self) -> String {
        format!("logistic(l2={}, importance=abs_standardized_coef)", self.config.l2)
    }

    fn importances(&self, x: &FeatureMatrix, y: &[u8]) -> Result<Vec<f64>> {
        Ok(train_logistic(x, y, &self.config)?.importance())
    }
}
