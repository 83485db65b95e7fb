//! Local linear surrogates fitted to perturbations around one row.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeOptions {
    pub n_samples: usize,
    /// `None` means `0.75 * sqrt(d)`.
    pub kernel_width: Option<f64>,
    pub top_k: usize,
    pub ridge: f64,
}

impl Default for LimeOptions {
    fn default() -> Self {
        LimeOptions { n_samples: 5000, kernel_width: None, top_k: 10, ridge: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeight {
    pub feature: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSurrogate {
    pub feature_names: Vec<String>,
    /// Coefficients per standardized unit, one per feature.
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Largest `top_k` weights by magnitude, ties by name.
    pub top: Vec<FeatureWeight>,
    pub kernel_width: f64,
    pub n_samples: usize,
    pub ridge: f64,
    /// Weighted R^2 of the surrogate on its perturbations.
    pub r2: f64,
    pub model_prediction: f64,
    pub seed: u64,
}

/// Perturbs `x` by `scale * z` with `z` standard normal, weights each sample
/// by `exp(-|z|^2 / width^2)` and fits a weighted ridge regression of the
/// model's probabilities on `z` with an unpenalized intercept.
pub fn lime_explain<F>(
    predict: F,
    x: &[f64],
    scale: &[f64],
    feature_names: &[String],
    options: &LimeOptions,
    rng: &mut Rng,
) -> Result<LocalSurrogate>
where
    F: Fn(&[Vec<f64>]) -> Result<Vec<f64>>,
{
    let d = x.len();
    if scale.len() != d || feature_names.len() != d {
        return Err(Error::InvalidArgument("x, scale and feature names differ in length".into()));
    }
    if d == 0 || options.n_samples < d + 1 {
        return Err(Error::InvalidArgument("LIME needs at least d + 1 samples".into()));
    }
    if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::InvalidArgument("perturbation scales must be positive".into()));
    }
    let width = options.kernel_width.unwrap_or(0.75 * (d as f64).sqrt());
    if !(width > 0.0) {
        return Err(Error::InvalidArgument(format!("kernel width {width} must be positive")));
    }
    let seed = rng.seed();
    let n = options.n_samples;
    let z: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect())
        .collect();
    let points: Vec<Vec<f64>> = z
        .iter()
        .map(|zi| zi.iter().enumerate().map(|(j, &v)| x[j] + v * scale[j]).collect())
        .collect();
    let y = predict(&points)?;
    let model_prediction = predict(&[x.to_vec()])?[0];
    let w: Vec<f64> = z
        .iter()
        .map(|zi| (-zi.iter().map(|v| v * v).sum::<f64>() / (width * width)).exp())
        .collect();
    let w_sum: f64 = w.iter().sum();
    if !(w_sum > 1e-12 * n as f64) {
        return Err(Error::Numeric(format!(
            "kernel width {width} leaves no perturbation with weight; use a wider kernel"
        )));
    }

    // Normal equations with an intercept column first.
    let p = d + 1;
    let design = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { z[i][j - 1] });
    let mut a = DMatrix::zeros(p, p);
    let mut b = DVector::zeros(p);
    for i in 0..n {
        let row = design.row(i).transpose();
        a.syger(w[i], &row, &row, 1.0);
        b += w[i] * y[i] * &row;
    }
    for j in 1..p {
        a[(j, j)] += options.ridge;
    }
    let beta = a
        .cholesky()
        .ok_or_else(|| Error::Numeric("surrogate system is singular".into()))?
        .solve(&b);

    let y_bar = w.iter().zip(&y).map(|(wi, yi)| wi * yi).sum::<f64>() / w_sum;
    let fitted = &design * &beta;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for i in 0..n {
        ss_res += w[i] * (y[i] - fitted[i]).powi(2);
        ss_tot += w[i] * (y[i] - y_bar).powi(2);
    }
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    let weights: Vec<f64> = beta.iter().skip(1).copied().collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        weights[b].abs().total_cmp(&weights[a].abs()).then_with(|| feature_names[a].cmp(&feature_names[b]))
    });
    let top = order
        .into_iter()
        .take(options.top_k)
        .map(|j| FeatureWeight { feature: feature_names[j].clone(), weight: weights[j] })
        .collect();
    Ok(LocalSurrogate {
        feature_names: feature_names.to_vec(),
        weights,
        intercept: beta[0],
        top,
        kernel_width: width,
        n_samples: n,
        ridge: options.ridge,
        r2,
        model_prediction,
        seed,
    })
}

impl LocalSurrogate {
    /// CSV `feature,weight` for the top features.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature", "weight"])?;
        for fw in &self.top {
            w.write_record([&fw.feature, &fw.weight.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("lime csv", e))?;
        Ok(())
    }
}
