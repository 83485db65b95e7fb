//! Minority oversampling by SMOTE and ADASYN.
//!
//! Both methods create a synthetic row as `x_i + delta * (x_nn - x_i)` with
//! `delta ~ U[0, 1)`, where `x_nn` is one of the `k` nearest minority
//! neighbors of `x_i`. They differ in how many rows each minority point seeds:
//! SMOTE cycles through the minority set; ADASYN allots more to points whose
//! neighborhood (over both classes) is dominated by the majority class.
//!
//! Neighbor search is Euclidean on z-scored features; ties go to the lower
//! row index.

use std::io::Write;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Column, Dataset, FeatureKind};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Smote,
    Adasyn,
    None,
}

/// Per-feature centering and scaling; zero-spread features get scale 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaling {
    /// Population mean and standard deviation of `rows`.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var.iter().map(|s| (s / n).sqrt()).map(|s| if s > 0.0 { s } else { 1.0 }).collect();
        Scaling { mean, scale }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` reference rows nearest to `query`, skipping index `exclude`.
fn k_nearest(reference: &[Vec<f64>], query: &[f64], k: usize, exclude: Option<usize>) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = reference
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, r)| (squared_distance(r, query), i))
        .collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k, order);
        cand.truncate(k);
    }
    cand.sort_unstable_by(order);
    cand.into_iter().map(|(_, i)| i).collect()
}

/// k nearest neighbors of every point of a fixed set, self excluded.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    pub k: usize,
    pub neighbors: Vec<Vec<usize>>,
}

impl NeighborIndex {
    pub fn build(points: &[Vec<f64>], k: usize, scaling: &Scaling) -> Result<Self> {
        if k == 0 || k >= points.len() {
            return Err(Error::InvalidArgument(format!(
                "neighbor count {k} needs 1 <= k <= {}",
                points.len().saturating_sub(1)
            )));
        }
        let z: Vec<Vec<f64>> = points.iter().map(|p| scaling.apply(p)).collect();
        let neighbors = (0..z.len()).into_par_iter().map(|i| k_nearest(&z, &z[i], k, Some(i))).collect();
        Ok(NeighborIndex { k, neighbors })
    }
}

/// Generated rows together with everything needed to replay them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub rows: Vec<Vec<f64>>,
    /// `(base, neighbor)` for each row. For [`smote`] these index the
    /// minority slice; for [`adasyn`] they index the full input.
    pub parents: Vec<(usize, usize)>,
    pub deltas: Vec<f64>,
    pub label: u8,
    /// ADASYN only: majority count among each minority point's neighbors,
    /// and the resulting per-point quota (minority points in input order).
    pub majority_counts: Vec<usize>,
    pub quotas: Vec<usize>,
    pub warnings: Vec<String>,
}

pub fn interpolate(base: &[f64], neighbor: &[f64], delta: f64) -> Vec<f64> {
    base.iter().zip(neighbor).map(|(&b, &n)| b + delta * (n - b)).collect()
}

pub fn smote(minority: &[Vec<f64>], k: usize, count: usize, rng: &mut Rng) -> Result<SyntheticBatch> {
    if minority.len() < 2 {
        return Err(Error::InvalidArgument("SMOTE needs at least two minority rows".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("SMOTE needs k >= 1".into()));
    }
    let index = NeighborIndex::build(minority, k, &Scaling::fit(minority))?;
    let n = minority.len();
    let mut batch = SyntheticBatch {
        rows: Vec::with_capacity(count),
        parents: Vec::with_capacity(count),
        deltas: Vec::with_capacity(count),
        label: 1,
        majority_counts: Vec::new(),
        quotas: Vec::new(),
        warnings: Vec::new(),
    };
    for g in 0..count {
        let base = g % n;
        let nn = index.neighbors[base][rng.random_range(0..k)];
        let delta: f64 = rng.random();
        batch.rows.push(interpolate(&minority[base], &minority[nn], delta));
        batch.parents.push((base, nn));
        batch.deltas.push(delta);
    }
    Ok(batch)
}

/// Splits `total` in proportion to integer `weights` by largest remainder,
/// exactly in integer arithmetic. Zero total weight gives equal shares.
pub fn proportional_quotas(weights: &[usize], total: usize) -> Vec<usize> {
    let uniform = weights.iter().all(|&w| w == 0);
    let w: Vec<u128> = weights.iter().map(|&x| if uniform { 1 } else { x as u128 }).collect();
    let sum: u128 = w.iter().sum();
    if sum == 0 {
        return Vec::new();
    }
    let t = total as u128;
    let mut quotas: Vec<usize> = w.iter().map(|&x| (x * t / sum) as usize).collect();
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| ((w[b] * t) % sum).cmp(&((w[a] * t) % sum)).then(a.cmp(&b)));
    let left = total - quotas.iter().sum::<usize>();
    for &i in &order[..left] {
        quotas[i] += 1;
    }
    quotas
}

/// ADASYN to full balance. The minority class is the rarer label (label 1 on
/// a tie). `k` neighbors over all rows set each point's difficulty; the
/// interpolation partner is drawn from its `k` nearest minority rows.
pub fn adasyn(x: &[Vec<f64>], y: &[u8], k: usize, rng: &mut Rng) -> Result<SyntheticBatch> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument("ADASYN rows and labels differ in length".into()));
    }
    let n_pos = y.iter().filter(|&&l| l == 1).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass("ADASYN".into()));
    }
    if k == 0 || k >= x.len() {
        return Err(Error::InvalidArgument(format!("ADASYN k = {k} needs 1 <= k <= {}", x.len() - 1)));
    }
    let label = if n_pos <= n_neg { 1 } else { 0 };
    let minority: Vec<usize> = (0..y.len()).filter(|&i| y[i] == label).collect();
    let total = n_pos.abs_diff(n_neg);

    let scaling = Scaling::fit(x);
    let z: Vec<Vec<f64>> = x.iter().map(|r| scaling.apply(r)).collect();
    let majority_counts: Vec<usize> = minority
        .par_iter()
        .map(|&i| k_nearest(&z, &z[i], k, Some(i)).into_iter().filter(|&j| y[j] != label).count())
        .collect();

    let mut warnings = Vec::new();
    if majority_counts.iter().all(|&c| c == 0) {
        warnings.push("no minority point has a majority neighbor; quotas are uniform".to_string());
    }
    let quotas = proportional_quotas(&majority_counts, total);

    let mut batch = SyntheticBatch {
        rows: Vec::with_capacity(total),
        parents: Vec::with_capacity(total),
        deltas: Vec::with_capacity(total),
        label,
        majority_counts,
        quotas,
        warnings,
    };
    if total == 0 {
        return Ok(batch);
    }
    if minority.len() < 2 {
        return Err(Error::InvalidArgument("ADASYN needs at least two minority rows".into()));
    }
    let k_min = k.min(minority.len() - 1);
    let minority_z: Vec<Vec<f64>> = minority.iter().map(|&i| z[i].clone()).collect();
    let partners: Vec<Vec<usize>> = (0..minority.len())
        .into_par_iter()
        .map(|m| k_nearest(&minority_z, &minority_z[m], k_min, Some(m)))
        .collect();
    for (m, &quota) in batch.quotas.clone().iter().enumerate() {
        for _ in 0..quota {
            let nn = minority[partners[m][rng.random_range(0..k_min)]];
            let delta: f64 = rng.random();
            let base = minority[m];
            batch.rows.push(interpolate(&x[base], &x[nn], delta));
            batch.parents.push((base, nn));
            batch.deltas.push(delta);
        }
    }
    Ok(batch)
}

/// One line of the replay log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub synthetic_id: String,
    pub base: String,
    pub neighbor: String,
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct Rebalanced {
    pub train: Dataset,
    pub method: Method,
    pub n_synthetic: usize,
    pub audit: Vec<AuditRow>,
    pub warnings: Vec<String>,
}

pub const SYNTHETIC_ID_PREFIX: &str = "synthetic-";

/// Oversamples the training rows of a complete, all-numeric dataset to class
/// parity. Test rows are never touched; synthetic rows get ids starting with
/// [`SYNTHETIC_ID_PREFIX`].
pub fn rebalance(dataset: &Dataset, train: &[usize], method: Method, k: usize, rng: &mut Rng) -> Result<Rebalanced> {
    let base = dataset.select_rows(train);
    if method == Method::None {
        return Ok(Rebalanced { train: base, method, n_synthetic: 0, audit: Vec::new(), warnings: Vec::new() });
    }
    if let Some(f) = base.schema().iter().find(|f| f.kind == FeatureKind::Categorical) {
        return Err(Error::InvalidArgument(format!(
            "oversampling needs numeric features; `{}` is categorical",
            f.name
        )));
    }
    let labels = base.require_labels()?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::SingleClass("training split".into()));
    }
    let names = base.feature_names();
    let rows = base.to_matrix(&names)?.rows();

    let (batch, parent_rows): (SyntheticBatch, Vec<(usize, usize)>) = match method {
        Method::Smote => {
            let label = if n_pos * 2 <= labels.len() { 1 } else { 0 };
            let minority: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
            let minority_rows: Vec<Vec<f64>> = minority.iter().map(|&i| rows[i].clone()).collect();
            let count = labels.len() - 2 * minority.len();
            let mut batch = smote(&minority_rows, k.min(minority.len().saturating_sub(1)).max(1), count, rng)?;
            batch.label = label;
            let parents = batch.parents.iter().map(|&(b, n)| (minority[b], minority[n])).collect();
            (batch, parents)
        }
        Method::Adasyn => {
            let batch = adasyn(&rows, labels, k, rng)?;
            let parents = batch.parents.clone();
            (batch, parents)
        }
        Method::None => unreachable!(),
    };

    let n_syn = batch.rows.len();
    let ids: Vec<String> = (0..n_syn).map(|i| format!("{SYNTHETIC_ID_PREFIX}{i:06}")).collect();
    let columns = (0..names.len())
        .map(|j| Column::complete(batch.rows.iter().map(|r| r[j]).collect()))
        .collect();
    let synthetic = Dataset::new(base.schema().to_vec(), columns, Some(vec![batch.label; n_syn]), ids.clone())?;
    let audit = ids
        .into_iter()
        .zip(&parent_rows)
        .zip(&batch.deltas)
        .map(|((id, &(b, n)), &delta)| AuditRow {
            synthetic_id: id,
            base: base.row_ids()[b].clone(),
            neighbor: base.row_ids()[n].clone(),
            delta,
        })
        .collect();
    Ok(Rebalanced {
        train: base.concat(&synthetic)?,
        method,
        n_synthetic: n_syn,
        audit,
        warnings: batch.warnings,
    })
}

/// CSV with header `synthetic_id,base,neighbor,delta`.
pub fn write_audit_csv<W: Write>(audit: &[AuditRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in audit {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<audit writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureDescriptor;

    #[test]
    fn interpolation_endpoints() {
        assert_eq!(interpolate(&[1.0, 2.0], &[3.0, -2.0], 0.0), vec![1.0, 2.0]);
        let near_one = 1.0 - f64::EPSILON / 2.0;
        let v = interpolate(&[1.0, 2.0], &[3.0, -2.0], near_one);
        assert!((v[0] - 3.0).abs() < 1e-12 && (v[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_minority_points() {
        let pts = vec![vec![1.5, -2.0]; 4];
        let b = smote(&pts, 2, 50, &mut Rng::new(1)).unwrap();
        assert!(b.rows.iter().all(|r| r == &pts[0]));
    }

    #[test]
    fn smote_round_robin_and_replay() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let b = smote(&pts, 2, 100, &mut Rng::new(42)).unwrap();
        assert_eq!(b.rows.len(), 100);
        for (g, row) in b.rows.iter().enumerate() {
            let (i, nn) = b.parents[g];
            assert_eq!(i, g % 3);
            assert_ne!(i, nn);
            assert!((0.0..1.0).contains(&b.deltas[g]));
            assert_eq!(row, &interpolate(&pts[i], &pts[nn], b.deltas[g]));
        }
        let again = smote(&pts, 2, 100, &mut Rng::new(42)).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn smote_errors() {
        assert!(smote(&[vec![1.0]], 1, 5, &mut Rng::new(0)).is_err());
        assert!(smote(&[vec![1.0], vec![2.0]], 0, 5, &mut Rng::new(0)).is_err());
        assert!(smote(&[vec![1.0], vec![2.0]], 2, 5, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn quotas_exact() {
        assert_eq!(proportional_quotas(&[0, 0, 0], 7), vec![3, 2, 2]);
        assert_eq!(proportional_quotas(&[0, 5, 0], 9), vec![0, 9, 0]);
        let q = proportional_quotas(&[1, 2, 3, 4], 11);
        assert_eq!(q.iter().sum::<usize>(), 11);
        assert_eq!(q, vec![1, 2, 3, 5]);
    }

    #[test]
    fn adasyn_separated_clusters_fallback() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            x.push(vec![i as f64 * 0.01, 0.0]);
            y.push(0);
        }
        for i in 0..6 {
            x.push(vec![100.0 + i as f64 * 0.01, 0.0]);
            y.push(1);
        }
        let b = adasyn(&x, &y, 3, &mut Rng::new(3)).unwrap();
        assert_eq!(b.majority_counts, vec![0; 6]);
        assert_eq!(b.quotas, proportional_quotas(&[0; 6], 14));
        assert_eq!(b.rows.len(), 14);
        assert_eq!(b.warnings.len(), 1);
    }

    #[test]
    fn adasyn_concentrates_on_borderline_point() {
        // Minority at 100..105 except one point sitting inside the majority cloud.
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..30 {
            x.push(vec![i as f64]);
            y.push(0);
        }
        x.push(vec![15.5]);
        y.push(1);
        for i in 0..5 {
            x.push(vec![100.0 + i as f64]);
            y.push(1);
        }
        let b = adasyn(&x, &y, 3, &mut Rng::new(4)).unwrap();
        assert_eq!(b.majority_counts, vec![3, 0, 0, 0, 0, 0]);
        assert_eq!(b.quotas, vec![24, 0, 0, 0, 0, 0]);
        assert!(b.parents.iter().all(|&(base, _)| base == 30));
    }

    #[test]
    fn rebalance_to_parity() {
        let n = 200;
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 6 == 0)).collect();
        let col: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let d = Dataset::new(
            vec![FeatureDescriptor::numeric("a", "")],
            vec![Column::complete(col)],
            Some(labels),
            (0..n).map(|i| i.to_string()).collect(),
        )
        .unwrap();
        let train: Vec<usize> = (0..150).collect();
        for method in [Method::Smote, Method::Adasyn] {
            let r = rebalance(&d, &train, method, 5, &mut Rng::new(9)).unwrap();
            let l = r.train.labels().unwrap();
            let pos = l.iter().filter(|&&v| v == 1).count();
            assert!((2 * pos).abs_diff(l.len()) <= 1);
            assert_eq!(&r.train.row_ids()[..150], &d.row_ids()[..150]);
            assert!(r.train.row_ids()[150..].iter().all(|id| id.starts_with(SYNTHETIC_ID_PREFIX)));
            assert_eq!(r.audit.len(), r.n_synthetic);
        }
        let none = rebalance(&d, &train, Method::None, 5, &mut Rng::new(9)).unwrap();
        assert_eq!(none.train, d.select_rows(&train));
    }

    #[test]
    fn rebalance_single_class_errors() {
        let d = Dataset::new(
            vec![FeatureDescriptor::numeric("a", "")],
            vec![Column::complete(vec![1.0, 2.0, 3.0])],
            Some(vec![0, 0, 0]),
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        assert!(matches!(rebalance(&d, &[0, 1, 2], Method::Smote, 1, &mut Rng::new(0)), Err(Error::SingleClass(_))));
    }
}
