//! Discrimination and threshold metrics, bootstrap intervals, and reports.

mod report;
mod welch;

pub use report::{
    build_report, compare_groups, write_roc_csv, CohortComparison, EvaluationReport, FeatureTest, ModelMetrics,
    ModelScores, ReportOptions,
};
pub use welch::{welch_t_test, WelchTest, SIGNIFICANCE_LEVEL};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite { column: "score".into(), row: i });
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::SingleClass("evaluation labels".into()));
    }
    Ok((pos, labels.len() - pos))
}

/// Mann-Whitney AUROC: the share of (positive, negative) pairs ordered
/// correctly, ties counting one half. Computed from mid-ranks.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (p, n) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&r| labels[r] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (p * (p + 1)) as f64 / 2.0;
    Ok(u / (p as f64 * n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub tp: usize,
    pub fp: usize,
}

/// ROC points for decreasing thresholds: `(0, 0)` at `+inf`, then one point
/// per distinct score, ending at `(1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub n_positive: usize,
    pub n_negative: usize,
}

pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    let (p, n) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0, tp: 0, fp: 0 }];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint { threshold: t, fpr: fp as f64 / n as f64, tpr: tp as f64 / p as f64, tp, fp });
    }
    Ok(RocCurve { points, n_positive: p, n_negative: n })
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum()
    }
}

/// Threshold maximizing `tpr - fpr` over the finite curve points, ties to
/// the higher threshold. The result is the midpoint between the winning
/// score and the next lower distinct score, which classifies identically.
pub fn youden_threshold(curve: &RocCurve) -> Result<f64> {
    let (p, n) = (curve.n_positive as i128, curve.n_negative as i128);
    let finite: Vec<&RocPoint> = curve.points.iter().filter(|pt| pt.threshold.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::InvalidArgument("ROC curve has no finite thresholds".into()));
    }
    let mut best = 0;
    let j = |pt: &RocPoint| pt.tp as i128 * n - pt.fp as i128 * p;
    for k in 1..finite.len() {
        if j(finite[k]) > j(finite[best]) {
            best = k;
        }
    }
    let t = finite[best].threshold;
    Ok(match finite.get(best + 1) {
        Some(next) => t + (next.threshold - t) / 2.0,
        None => t,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    /// Absent when nothing is predicted positive.
    pub precision: Option<f64>,
}

/// Confusion-matrix ratios with `score >= threshold` predicted positive.
pub fn threshold_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ThresholdMetrics> {
    class_counts(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(ThresholdMetrics {
        threshold,
        tp,
        fp,
        tn,
        fn_,
        accuracy: (tp + tn) as f64 / scores.len() as f64,
        sensitivity: tp as f64 / (tp + fn_) as f64,
        specificity: tn as f64 / (tn + fp) as f64,
        precision: (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub point: f64,
    pub low: f64,
    pub high: f64,
    pub level: f64,
    pub n_boot: usize,
    pub seed: u64,
    /// Resamples redrawn because they lost a class. Stratified resampling
    /// keeps both classes, so this stays zero unless that changes.
    pub redrawn: usize,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile interval of AUROC over resamples drawn with replacement
/// within each class. Resample `b` uses `rng.derive(b)`. The interval is
/// widened if needed so that it contains the point estimate.
pub fn bootstrap_ci(scores: &[f64], labels: &[u8], n_boot: usize, level: f64, rng: &Rng) -> Result<BootstrapCi> {
    if n_boot == 0 {
        return Err(Error::InvalidArgument("n_boot must be positive".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level {level} not in (0, 1)")));
    }
    let point = auroc(scores, labels)?;
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    let mut stats: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut r = rng.derive(b as u64);
            let mut s = Vec::with_capacity(labels.len());
            let mut l = Vec::with_capacity(labels.len());
            for (group, label) in [(&pos, 1u8), (&neg, 0u8)] {
                for _ in 0..group.len() {
                    s.push(scores[group[r.random_range(0..group.len())]]);
                    l.push(label);
                }
            }
            auroc(&s, &l)
        })
        .collect::<Result<_>>()?;
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let low = quantile_sorted(&stats, alpha).min(point);
    let high = quantile_sorted(&stats, 1.0 - alpha).max(point);
    Ok(BootstrapCi { point, low, high, level, n_boot, seed: rng.seed(), redrawn: 0 })
}
