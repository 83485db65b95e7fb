use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{bootstrap_ci, roc_curve, threshold_metrics, welch_t_test, RocCurve, SIGNIFICANCE_LEVEL};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Test-set probabilities of one model and its operating threshold.
#[derive(Debug, Clone)]
pub struct ModelScores {
    pub name: String,
    pub scores: Vec<f64>,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub n_bootstrap: usize,
    pub level: f64,
    pub seed: u64,
    /// How operating thresholds were chosen, echoed into the report.
    pub threshold_rule: String,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { n_bootstrap: 1000, level: 0.95, seed: 42, threshold_rule: "youden".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub auroc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: Option<f64>,
    pub threshold: f64,
    pub n_bootstrap: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTest {
    pub feature: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
    pub significant: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortComparison {
    pub name: String,
    pub group_a: String,
    pub group_b: String,
    pub n_a: usize,
    pub n_b: usize,
    pub rows: Vec<FeatureTest>,
}

impl CohortComparison {
    pub fn n_significant(&self) -> usize {
        self.rows.iter().filter(|r| r.significant).count()
    }

    pub fn min_p(&self) -> Option<f64> {
        self.rows.iter().map(|r| r.p_value).min_by(f64::total_cmp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_test: usize,
    pub n_positive: usize,
    pub level: f64,
    pub threshold_rule: String,
    pub models: Vec<ModelMetrics>,
    pub comparisons: Vec<CohortComparison>,
}

/// Welch tests of each feature between two row groups, observed cells only.
pub fn compare_groups(
    name: &str,
    dataset: &Dataset,
    features: &[String],
    (label_a, rows_a): (&str, &[usize]),
    (label_b, rows_b): (&str, &[usize]),
) -> Result<CohortComparison> {
    let mut rows = Vec::with_capacity(features.len());
    for f in features {
        let col = dataset.column_by_name(f)?;
        let pick = |rs: &[usize]| -> Vec<f64> { rs.iter().filter_map(|&r| col.get(r)).collect() };
        let w = welch_t_test(&pick(rows_a), &pick(rows_b))?;
        rows.push(FeatureTest {
            feature: f.clone(),
            mean_a: w.mean_a,
            mean_b: w.mean_b,
            t: w.t,
            df: w.df,
            p_value: w.p_value,
            significant: w.p_value < SIGNIFICANCE_LEVEL,
            note: w.degenerate,
        });
    }
    Ok(CohortComparison {
        name: name.into(),
        group_a: label_a.into(),
        group_b: label_b.into(),
        n_a: rows_a.len(),
        n_b: rows_b.len(),
        rows,
    })
}

/// One metrics row and ROC curve per model. Model `i` bootstraps with
/// `Rng::new(seed).derive(i)`.
pub fn build_report(
    models: &[ModelScores],
    labels: &[u8],
    comparisons: Vec<CohortComparison>,
    options: &ReportOptions,
) -> Result<(EvaluationReport, Vec<(String, RocCurve)>)> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let root = Rng::new(options.seed);
    let mut rows = Vec::with_capacity(models.len());
    let mut curves = Vec::with_capacity(models.len());
    for (i, m) in models.iter().enumerate() {
        let ci = bootstrap_ci(&m.scores, labels, options.n_bootstrap, options.level, &root.derive(i as u64))?;
        let tm = threshold_metrics(&m.scores, labels, m.threshold)?;
        rows.push(ModelMetrics {
            model: m.name.clone(),
            auroc: ci.point,
            ci_low: ci.low,
            ci_high: ci.high,
            accuracy: tm.accuracy,
            sensitivity: tm.sensitivity,
            specificity: tm.specificity,
            precision: tm.precision,
            threshold: m.threshold,
            n_bootstrap: options.n_bootstrap,
            seed: options.seed,
        });
        curves.push((m.name.clone(), roc_curve(&m.scores, labels)?));
    }
    let report = EvaluationReport {
        n_test: labels.len(),
        n_positive: labels.iter().filter(|&&l| l == 1).count(),
        level: options.level,
        threshold_rule: options.threshold_rule.clone(),
        models: rows,
        comparisons,
    };
    Ok((report, curves))
}

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "<0.001".into()
    } else {
        format!("{p:.3}")
    }
}

impl EvaluationReport {
    /// Aligned plain-text tables.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let pct = (self.level * 100.0).round();
        let _ = writeln!(
            s,
            "Test rows: {} ({} positive). Thresholds: {}.\n",
            self.n_test, self.n_positive, self.threshold_rule
        );
        let _ = writeln!(
            s,
            "{:<10} {:>7} {:>17} {:>9} {:>11} {:>11} {:>9} {:>9}",
            "model",
            "auroc",
            format!("{pct}% ci"),
            "accuracy",
            "sensitivity",
            "specificity",
            "precision",
            "threshold"
        );
        for m in &self.models {
            let _ = writeln!(
                s,
                "{:<10} {:>7.3} {:>17} {:>9.3} {:>11.3} {:>11.3} {:>9} {:>9.4}",
                m.model,
                m.auroc,
                format!("({:.3}-{:.3})", m.ci_low, m.ci_high),
                m.accuracy,
                m.sensitivity,
                m.specificity,
                m.precision.map_or("-".to_string(), |p| format!("{p:.3}")),
                m.threshold
            );
        }
        for c in &self.comparisons {
            let width = c.rows.iter().map(|r| r.feature.len()).max().unwrap_or(7).max(7);
            let _ = writeln!(s, "\n{} ({} n={}, {} n={})", c.name, c.group_a, c.n_a, c.group_b, c.n_b);
            let _ = writeln!(s, "{:<width$} {:>12} {:>12} {:>8} {:>4}", "feature", c.group_a, c.group_b, "p", "sig");
            for r in &c.rows {
                let _ = writeln!(
                    s,
                    "{:<width$} {:>12.3} {:>12.3} {:>8} {:>4}",
                    r.feature,
                    r.mean_a,
                    r.mean_b,
                    fmt_p(r.p_value),
                    if r.significant { "*" } else { "" }
                );
            }
        }
        s
    }
}

/// CSV with header `threshold,fpr,tpr`.
pub fn write_roc_csv<W: Write>(curve: &RocCurve, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["threshold", "fpr", "tpr"])?;
    for p in &curve.points {
        w.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("roc csv", e))?;
    Ok(())
}
