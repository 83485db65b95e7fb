//! Missingness-banded imputation.
//!
//! Each column gets one action from its kind and its missing fraction on the
//! fitting rows:
//!
//! | kind        | fraction        | action |
//! |-------------|-----------------|--------|
//! | numeric     | `[0, low]`      | mean   |
//! | numeric     | `(low, high]`   | KNN    |
//! | numeric     | `> high`        | drop   |
//! | categorical | `[0, cat_high]` | mode   |
//! | categorical | `> cat_high`    | drop   |
//!
//! Statistics and KNN donors come only from the fitting rows (normally the
//! training split), so test rows never influence a fill.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{stats_of, Column, Dataset, FeatureKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub low: f64,
    pub high: f64,
    pub categorical_high: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { low: 0.20, high: 0.50, categorical_high: 0.20 }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.low
            && self.low < self.high
            && self.high < 1.0
            && 0.0 < self.categorical_high
            && self.categorical_high < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("imputation thresholds out of order: {self:?}")))
        }
    }
}

/// Which rows statistics are fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitScope {
    #[default]
    TrainOnly,
    /// Fit on every row, train and test alike. Leaks test information; kept
    /// for comparison runs.
    WholeDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Mean,
    Mode,
    Knn,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ColumnAction {
    Mean { value: f64 },
    Mode { code: usize, level: String },
    Knn { k: usize },
    Drop,
}

impl ColumnAction {
    pub fn kind(&self) -> ActionKind {
        match self {
            ColumnAction::Mean { .. } => ActionKind::Mean,
            ColumnAction::Mode { .. } => ActionKind::Mode,
            ColumnAction::Knn { .. } => ActionKind::Knn,
            ColumnAction::Drop => ActionKind::Drop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnPlan {
    pub name: String,
    pub kind: FeatureKind,
    pub missing_fraction: f64,
    #[serde(flatten)]
    pub action: ColumnAction,
    /// Fitted mean/sd of observed numeric values; used for z-scored KNN
    /// distances and as the fallback fill.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationPolicy {
    pub thresholds: Thresholds,
    pub knn_k: usize,
    pub fit_scope: FitScope,
    pub fitted_on: String,
    pub n_fit_rows: usize,
    pub columns: Vec<ColumnPlan>,
}

impl ImputationPolicy {
    pub fn kept_columns(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.action != ColumnAction::Drop)
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn column(&self, name: &str) -> Option<&ColumnPlan> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputeOptions {
    pub thresholds: Thresholds,
    pub k: usize,
    pub fit_scope: FitScope,
}

impl Default for ImputeOptions {
    fn default() -> Self {
        ImputeOptions { thresholds: Thresholds::default(), k: 5, fit_scope: FitScope::TrainOnly }
    }
}

/// Band assignment. Intervals are closed on the right: a fraction exactly
/// equal to a threshold takes the lower band.
pub fn classify(kind: FeatureKind, missing_fraction: f64, t: &Thresholds) -> ActionKind {
    match kind {
        FeatureKind::Numeric if missing_fraction <= t.low => ActionKind::Mean,
        FeatureKind::Numeric if missing_fraction <= t.high => ActionKind::Knn,
        FeatureKind::Numeric => ActionKind::Drop,
        FeatureKind::Categorical if missing_fraction <= t.categorical_high => ActionKind::Mode,
        FeatureKind::Categorical => ActionKind::Drop,
    }
}

/// Assigns an action to every column from missingness over `fit_rows` and
/// fits the mean/mode statistics.
pub fn plan(
    dataset: &Dataset,
    fit_rows: &[usize],
    options: &ImputeOptions,
    fitted_on: impl Into<String>,
) -> Result<ImputationPolicy> {
    options.thresholds.validate()?;
    if fit_rows.is_empty() {
        return Err(Error::InvalidArgument("imputation needs at least one fitting row".into()));
    }
    if options.k == 0 {
        return Err(Error::InvalidArgument("KNN imputation needs k >= 1".into()));
    }
    let columns = dataset
        .schema()
        .iter()
        .zip(dataset.columns())
        .map(|(desc, col)| {
            let observed = fit_rows.iter().filter_map(|&r| col.get(r));
            let stats = stats_of(observed.clone(), fit_rows.len());
            let action = match classify(desc.kind, stats.missing_fraction, &options.thresholds) {
                ActionKind::Mean => ColumnAction::Mean {
                    value: stats.mean.expect("mean band implies observed values"),
                },
                ActionKind::Knn => ColumnAction::Knn { k: options.k },
                ActionKind::Mode => {
                    let code = mode_code(observed, desc.levels.len());
                    ColumnAction::Mode { code, level: desc.levels[code].clone() }
                }
                ActionKind::Drop => ColumnAction::Drop,
            };
            let numeric = desc.kind == FeatureKind::Numeric;
            ColumnPlan {
                name: desc.name.clone(),
                kind: desc.kind,
                missing_fraction: stats.missing_fraction,
                action,
                mean: stats.mean.filter(|_| numeric),
                sd: stats.sd.filter(|_| numeric),
            }
        })
        .collect();
    Ok(ImputationPolicy {
        thresholds: options.thresholds,
        knn_k: options.k,
        fit_scope: options.fit_scope,
        fitted_on: fitted_on.into(),
        n_fit_rows: fit_rows.len(),
        columns,
    })
}

/// Most frequent code; ties go to the smaller code.
fn mode_code(values: impl Iterator<Item = f64>, n_levels: usize) -> usize {
    let mut counts = vec![0usize; n_levels.max(1)];
    for v in values {
        counts[v as usize] += 1;
    }
    let mut best = 0;
    for (code, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = code;
        }
    }
    best
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImputeSummary {
    /// Cells filled per kept column, in output column order.
    pub filled: Vec<(String, usize)>,
    /// KNN targets that observed no comparison feature (or shared none with
    /// any donor) and took the fitted mean instead.
    pub knn_fallbacks: usize,
}

/// Applies `policy` to every row of `dataset`. Returns a complete dataset
/// holding only the kept columns.
pub fn fit_apply(
    dataset: &Dataset,
    policy: &ImputationPolicy,
    fit_rows: &[usize],
) -> Result<(Dataset, ImputeSummary)> {
    if policy.columns.len() != dataset.n_features()
        || policy.columns.iter().zip(dataset.schema()).any(|(p, d)| p.name != d.name)
    {
        return Err(Error::InvalidArgument("policy columns do not match the dataset".into()));
    }
    let z = ZScores::new(dataset, policy);
    let mut summary = ImputeSummary::default();
    let mut schema = Vec::new();
    let mut columns = Vec::new();

    for (j, (plan, col)) in policy.columns.iter().zip(dataset.columns()).enumerate() {
        let (values, filled) = match &plan.action {
            ColumnAction::Drop => continue,
            ColumnAction::Mean { value } => fill_constant(col, *value),
            ColumnAction::Mode { code, .. } => fill_constant(col, *code as f64),
            ColumnAction::Knn { k } => {
                let (values, filled, fallbacks) = fill_knn(dataset, &z, j, *k, fit_rows, plan)?;
                summary.knn_fallbacks += fallbacks;
                (values, filled)
            }
        };
        summary.filled.push((plan.name.clone(), filled));
        schema.push(dataset.schema()[j].clone());
        columns.push(Column::complete(values));
    }
    let out = Dataset::new(schema, columns, dataset.labels().map(<[u8]>::to_vec), dataset.row_ids().to_vec())?
        .with_source_columns(
            dataset.label_column().map(str::to_string),
            dataset.id_column().map(str::to_string),
        );
    Ok((out, summary))
}

fn fill_constant(col: &Column, value: f64) -> (Vec<f64>, usize) {
    let values = (0..col.len()).map(|i| col.get(i).unwrap_or(value)).collect();
    (values, col.missing_count())
}

/// z-scored view of the comparison columns (kept numeric columns).
struct ZScores {
    /// Dataset column index of each comparison column.
    columns: Vec<usize>,
    /// `values[c][row]`, valid where `mask[c][row]` is false.
    values: Vec<Vec<f64>>,
    mask: Vec<Vec<bool>>,
}

impl ZScores {
    fn new(dataset: &Dataset, policy: &ImputationPolicy) -> Self {
        let mut columns = Vec::new();
        let mut values = Vec::new();
        let mut mask = Vec::new();
        for (j, plan) in policy.columns.iter().enumerate() {
            if plan.kind != FeatureKind::Numeric || plan.action == ColumnAction::Drop {
                continue;
            }
            let col = dataset.column(j);
            let mean = plan.mean.unwrap_or(0.0);
            let sd = plan.sd.filter(|s| *s > 0.0).unwrap_or(1.0);
            columns.push(j);
            values.push((0..col.len()).map(|r| col.get(r).map_or(0.0, |v| (v - mean) / sd)).collect());
            mask.push(col.missing_mask().to_vec());
        }
        ZScores { columns, values, mask }
    }
}

fn fill_knn(
    dataset: &Dataset,
    z: &ZScores,
    target: usize,
    k: usize,
    fit_rows: &[usize],
    plan: &ColumnPlan,
) -> Result<(Vec<f64>, usize, usize)> {
    let col = dataset.column(target);
    let donors: Vec<usize> = fit_rows.iter().copied().filter(|&r| !col.is_missing(r)).collect();
    if k > donors.len() {
        return Err(Error::NotEnoughNeighbors { column: plan.name.clone(), k, available: donors.len() });
    }
    let fallback = plan.mean.expect("KNN band implies observed values");
    let comparison: Vec<usize> =
        (0..z.columns.len()).filter(|&c| z.columns[c] != target).collect();
    let total = comparison.len() as f64;
    let targets: Vec<usize> = (0..col.len()).filter(|&r| col.is_missing(r)).collect();

    let fills: Vec<Option<f64>> = targets
        .par_iter()
        .map(|&row| {
            let observed: Vec<usize> =
                comparison.iter().copied().filter(|&c| !z.mask[c][row]).collect();
            if observed.is_empty() {
                return None;
            }
            let mut candidates: Vec<(f64, usize)> = donors
                .iter()
                .filter_map(|&donor| {
                    let mut shared = 0usize;
                    let mut ss = 0.0;
                    for &c in &observed {
                        if !z.mask[c][donor] {
                            let d = z.values[c][row] - z.values[c][donor];
                            ss += d * d;
                            shared += 1;
                        }
                    }
                    (shared > 0).then(|| (total / shared as f64 * ss, donor))
                })
                .collect();
            if candidates.is_empty() {
                return None;
            }
            let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            let take = k.min(candidates.len());
            if take < candidates.len() {
                candidates.select_nth_unstable_by(take - 1, order);
                candidates.truncate(take);
            }
            candidates.sort_unstable_by(order);
            let sum: f64 = candidates.iter().map(|&(_, d)| col.get(d).expect("donor observes target")).sum();
            Some(sum / take as f64)
        })
        .collect();

    let mut values: Vec<f64> = (0..col.len()).map(|r| col.get(r).unwrap_or(fallback)).collect();
    let mut fallbacks = 0;
    for (&row, fill) in targets.iter().zip(fills) {
        match fill {
            Some(v) => values[row] = v,
            None => fallbacks += 1,
        }
    }
    Ok((values, targets.len(), fallbacks))
}
