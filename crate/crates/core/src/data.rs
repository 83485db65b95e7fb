//! In-memory cohort representation shared by every stage.
//!
//! Storage is column-major. Missing cells are tracked by an explicit mask; the
//! payload stored under a masked cell is never meaningful, and in debug builds
//! it is a NaN poison so that any accidental read contaminates results.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Payload written under masked cells.
#[cfg(debug_assertions)]
pub const MASKED_PAYLOAD: f64 = f64::NAN;
#[cfg(not(debug_assertions))]
pub const MASKED_PAYLOAD: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default)]
    pub category: String,
    /// Category labels in code order. Empty for numeric features; for
    /// categorical features left empty in a schema file, levels are assigned
    /// in order of first appearance.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
}

impl FeatureDescriptor {
    pub fn numeric(name: impl Into<String>, category: impl Into<String>) -> Self {
        FeatureDescriptor {
            name: name.into(),
            kind: FeatureKind::Numeric,
            unit: None,
            category: category.into(),
            levels: Vec::new(),
        }
    }

    pub fn categorical(
        name: impl Into<String>,
        category: impl Into<String>,
        levels: Vec<String>,
    ) -> Self {
        FeatureDescriptor {
            name: name.into(),
            kind: FeatureKind::Categorical,
            unit: None,
            category: category.into(),
            levels,
        }
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.unit = Some(unit.into());
        self
    }
}

/// One feature column: values plus missingness mask.
#[derive(Debug, Clone)]
pub struct Column {
    pub(crate) values: Vec<f64>,
    pub(crate) missing: Vec<bool>,
}

impl Column {
    pub fn new(mut values: Vec<f64>, missing: Vec<bool>) -> Result<Self> {
        if values.len() != missing.len() {
            return Err(Error::InvalidArgument(format!(
                "column has {} values but {} mask entries",
                values.len(),
                missing.len()
            )));
        }
        for (v, &m) in values.iter_mut().zip(&missing) {
            if m {
                *v = MASKED_PAYLOAD;
            }
        }
        Ok(Column { values, missing })
    }

    pub fn complete(values: Vec<f64>) -> Self {
        let missing = vec![false; values.len()];
        Column { values, missing }
    }

    /// Column from optional cells; `None` becomes a masked cell.
    pub fn from_options(cells: &[Option<f64>]) -> Self {
        let missing: Vec<bool> = cells.iter().map(Option::is_none).collect();
        let values = cells.iter().map(|c| c.unwrap_or(MASKED_PAYLOAD)).collect();
        Column { values, missing }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, row: usize) -> Option<f64> {
        if self.missing[row] {
            None
        } else {
            Some(self.values[row])
        }
    }

    pub fn is_missing(&self, row: usize) -> bool {
        self.missing[row]
    }

    pub fn missing_mask(&self) -> &[bool] {
        &self.missing
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn is_complete(&self) -> bool {
        !self.missing.iter().any(|&m| m)
    }

    /// Observed `(row, value)` pairs in row order.
    pub fn observed(&self) -> impl Iterator<Item = (usize, f64)> + Clone + '_ {
        self.values
            .iter()
            .zip(&self.missing)
            .enumerate()
            .filter(|(_, (_, &m))| !m)
            .map(|(i, (&v, _))| (i, v))
    }

    /// Raw values of a column known to be complete.
    pub fn complete_values(&self) -> Option<&[f64]> {
        self.is_complete().then_some(self.values.as_slice())
    }

    fn take(&self, rows: &[usize]) -> Column {
        Column {
            values: rows.iter().map(|&r| self.values[r]).collect(),
            missing: rows.iter().map(|&r| self.missing[r]).collect(),
        }
    }

    /// Overwrites every masked payload. Lets tests check that no computation
    /// depends on what is stored under the mask.
    pub fn poison_masked(&mut self, payload: f64) {
        for (v, &m) in self.values.iter_mut().zip(&self.missing) {
            if m {
                *v = payload;
            }
        }
    }
}

impl PartialEq for Column {
    // Masked payloads are not part of a column's identity.
    fn eq(&self, other: &Self) -> bool {
        self.missing == other.missing
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.missing)
                .all(|((a, b), &m)| m || a.to_bits() == b.to_bits())
    }
}

/// Immutable cohort table.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Vec<FeatureDescriptor>,
    columns: Vec<Column>,
    labels: Option<Vec<u8>>,
    row_ids: Vec<String>,
    label_column: Option<String>,
    id_column: Option<String>,
}

impl Dataset {
    pub fn new(
        schema: Vec<FeatureDescriptor>,
        columns: Vec<Column>,
        labels: Option<Vec<u8>>,
        row_ids: Vec<String>,
    ) -> Result<Self> {
        if schema.len() != columns.len() {
            return Err(Error::InvalidArgument(format!(
                "{} descriptors for {} columns",
                schema.len(),
                columns.len()
            )));
        }
        let n = row_ids.len();
        let mut seen = HashSet::new();
        for (desc, col) in schema.iter().zip(&columns) {
            if !seen.insert(desc.name.as_str()) {
                return Err(Error::DuplicateHeader(desc.name.clone()));
            }
            if col.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "column `{}` has {} rows, expected {n}",
                    desc.name,
                    col.len()
                )));
            }
            for (row, v) in col.observed() {
                if !v.is_finite() {
                    return Err(Error::NonFinite { column: desc.name.clone(), row });
                }
                if desc.kind == FeatureKind::Categorical
                    && (v.fract() != 0.0 || v < 0.0 || v as usize >= desc.levels.len())
                {
                    return Err(Error::InvalidArgument(format!(
                        "column `{}` row {row}: code {v} has no level",
                        desc.name
                    )));
                }
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "{} labels for {n} rows",
                    labels.len()
                )));
            }
            if let Some((row, &l)) = labels.iter().enumerate().find(|(_, &l)| l > 1) {
                return Err(Error::InvalidLabel { row, token: l.to_string() });
            }
        }
        Ok(Dataset { schema, columns, labels, row_ids, label_column: None, id_column: None })
    }

    /// Records the CSV column names this dataset was read from (or will be
    /// written to).
    pub fn with_source_columns(mut self, label: Option<String>, id: Option<String>) -> Self {
        self.label_column = label;
        self.id_column = id;
        self
    }

    pub fn label_column(&self) -> Option<&str> {
        self.label_column.as_deref()
    }

    pub fn id_column(&self) -> Option<&str> {
        self.id_column.as_deref()
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &[FeatureDescriptor] {
        &self.schema
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.schema.iter().map(|d| d.name.clone()).collect()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, index: usize) -> &Column {
        &self.columns[index]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|d| d.name == name)
    }

    pub fn column_by_name(&self, name: &str) -> Result<&Column> {
        self.column_index(name)
            .map(|j| &self.columns[j])
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[u8]> {
        self.labels().ok_or(Error::MissingLabels)
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn is_complete(&self) -> bool {
        self.columns.iter().all(Column::is_complete)
    }

    /// Sub-table of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.take(rows)).collect(),
            labels: self.labels.as_ref().map(|l| rows.iter().map(|&r| l[r]).collect()),
            row_ids: rows.iter().map(|&r| self.row_ids[r].clone()).collect(),
            label_column: self.label_column.clone(),
            id_column: self.id_column.clone(),
        }
    }

    /// Sub-table restricted to the named features, in the given order.
    pub fn select_features<S: AsRef<str>>(&self, names: &[S]) -> Result<Dataset> {
        let mut schema = Vec::with_capacity(names.len());
        let mut columns = Vec::with_capacity(names.len());
        for name in names {
            let j = self
                .column_index(name.as_ref())
                .ok_or_else(|| Error::UnknownColumn(name.as_ref().to_string()))?;
            schema.push(self.schema[j].clone());
            columns.push(self.columns[j].clone());
        }
        Ok(Dataset {
            schema,
            columns,
            labels: self.labels.clone(),
            row_ids: self.row_ids.clone(),
            label_column: self.label_column.clone(),
            id_column: self.id_column.clone(),
        })
    }

    /// Rows of `other` appended below `self`. Schemas must match by name and kind.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.schema.len() != other.schema.len()
            || self
                .schema
                .iter()
                .zip(&other.schema)
                .any(|(a, b)| a.name != b.name || a.kind != b.kind)
        {
            return Err(Error::InvalidArgument("cannot concatenate: schemas differ".into()));
        }
        let columns = self
            .columns
            .iter()
            .zip(&other.columns)
            .map(|(a, b)| Column {
                values: a.values.iter().chain(&b.values).copied().collect(),
                missing: a.missing.iter().chain(&b.missing).copied().collect(),
            })
            .collect();
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            (None, None) => None,
            _ => return Err(Error::MissingLabels),
        };
        Ok(Dataset {
            schema: self.schema.clone(),
            columns,
            labels,
            row_ids: self.row_ids.iter().chain(&other.row_ids).cloned().collect(),
            label_column: self.label_column.clone(),
            id_column: self.id_column.clone(),
        })
    }

    /// Complete-data feature matrix over the named columns.
    pub fn to_matrix<S: AsRef<str>>(&self, names: &[S]) -> Result<FeatureMatrix> {
        let mut data = Vec::with_capacity(names.len() * self.n_rows());
        for name in names {
            let col = self.column_by_name(name.as_ref())?;
            let values = col
                .complete_values()
                .ok_or_else(|| Error::IncompleteColumn(name.as_ref().to_string()))?;
            data.extend_from_slice(values);
        }
        Ok(FeatureMatrix {
            n_rows: self.n_rows(),
            names: names.iter().map(|s| s.as_ref().to_string()).collect(),
            data,
        })
    }

    pub fn poison_masked(&mut self, payload: f64) {
        for c in &mut self.columns {
            c.poison_masked(payload);
        }
    }
}

/// Dense complete-data matrix, column-major, with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    names: Vec<String>,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_columns(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::InvalidArgument("names and columns differ in length".into()));
        }
        let n_rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n_rows) {
            return Err(Error::InvalidArgument("ragged columns".into()));
        }
        Ok(FeatureMatrix { n_rows, names, data: columns.concat() })
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let d = names.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidArgument("row width differs from names".into()));
        }
        let mut data = vec![0.0; d * rows.len()];
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                data[j * rows.len() + i] = v;
            }
        }
        Ok(FeatureMatrix { n_rows: rows.len(), names, data })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.n_rows..(j + 1) * self.n_rows]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.n_rows + row]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.n_cols()).map(|j| self.get(i, j)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_rows).map(|i| self.row(i)).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols());
        for j in 0..self.n_cols() {
            let col = self.column(j);
            data.extend(rows.iter().map(|&r| col[r]));
        }
        FeatureMatrix { n_rows: rows.len(), names: self.names.clone(), data }
    }

    pub fn select_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<FeatureMatrix> {
        let mut data = Vec::with_capacity(names.len() * self.n_rows);
        for name in names {
            let j = self
                .column_index(name.as_ref())
                .ok_or_else(|| Error::UnknownColumn(name.as_ref().to_string()))?;
            data.extend_from_slice(self.column(j));
        }
        Ok(FeatureMatrix {
            n_rows: self.n_rows,
            names: names.iter().map(|s| s.as_ref().to_string()).collect(),
            data,
        })
    }

    /// Fails on the first NaN or infinite cell.
    pub fn check_finite(&self) -> Result<()> {
        for j in 0..self.n_cols() {
            if let Some(row) = self.column(j).iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { column: self.names[j].clone(), row });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub stratified: bool,
}

/// Random train/test partition. `fraction` is the training share; in
/// stratified mode each class is split separately, with per-class quotas
/// allotted by largest remainder so the total still rounds `fraction * n`.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64, stratified: bool) -> Result<SplitIndices> {
    let n = dataset.n_rows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("split fraction {fraction} not in (0, 1)")));
    }
    let n_train = (fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} of {n} rows leaves an empty part"
        )));
    }
    let mut rng = Rng::new(seed);

    let groups: Vec<Vec<usize>> = if stratified {
        let labels = dataset.require_labels()?;
        let mut by_class = vec![Vec::new(), Vec::new()];
        for (i, &l) in labels.iter().enumerate() {
            by_class[l as usize].push(i);
        }
        by_class
    } else {
        vec![(0..n).collect()]
    };

    let quotas = largest_remainder(
        &groups.iter().map(|g| fraction * g.len() as f64).collect::<Vec<_>>(),
        n_train,
    );

    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n - n_train);
    for (mut group, quota) in groups.into_iter().zip(quotas) {
        group.shuffle(&mut rng);
        train.extend_from_slice(&group[..quota]);
        test.extend_from_slice(&group[quota..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test, seed, stratified })
}

/// Rounds non-negative `shares` to integers summing to `total`: floors first,
/// then leftover units to the largest fractional parts (ties to lower index).
pub(crate) fn largest_remainder(shares: &[f64], total: usize) -> Vec<usize> {
    let mut out: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        out[i] += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub n_observed: usize,
    pub missing_fraction: f64,
}

/// Summary statistics over unmasked cells. `sd` is the sample standard
/// deviation and needs at least two observations.
pub fn column_stats(dataset: &Dataset, column: &str) -> Result<ColumnStats> {
    let col = dataset.column_by_name(column)?;
    Ok(stats_of(col.observed().map(|(_, v)| v), col.len()))
}

pub(crate) fn stats_of(values: impl Iterator<Item = f64> + Clone, total: usize) -> ColumnStats {
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for v in values.clone() {
        n += 1;
        sum += v;
        min = min.min(v);
        max = max.max(v);
    }
    let missing_fraction = if total == 0 { 0.0 } else { (total - n) as f64 / total as f64 };
    if n == 0 {
        return ColumnStats { mean: None, sd: None, min: None, max: None, n_observed: 0, missing_fraction };
    }
    let mean = sum / n as f64;
    let sd = (n > 1).then(|| {
        let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    ColumnStats { mean: Some(mean), sd, min: Some(min), max: Some(max), n_observed: n, missing_fraction }
}
