//! Feature selection: VIF pruning, recursive feature elimination, then
//! re-inclusion of must-keep features.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

/// `1 - R²` below this is reported as an infinite VIF.
pub const PERFECT_FIT_TOL: f64 = 1e-12;

/// Variance inflation factor of column `feature` against every other column
/// of `x`, via an intercept OLS fit solved with column-pivoted QR.
pub fn vif(x: &FeatureMatrix, feature: usize) -> Result<f64> {
    let (n, p) = (x.n_rows(), x.n_cols());
    if p < 2 {
        return Err(Error::InvalidArgument("VIF needs at least two features".into()));
    }
    if n < p + 1 {
        return Err(Error::InvalidArgument(format!("VIF needs at least {} rows, got {n}", p + 1)));
    }
    let centered = |j: usize| {
        let col = x.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        col.iter().map(move |v| v - mean)
    };
    let y: Vec<f64> = centered(feature).collect();
    let tss: f64 = y.iter().map(|v| v * v).sum();
    let scale: f64 = x.column(feature).iter().map(|v| v * v).sum();
    if tss <= f64::EPSILON * f64::EPSILON * scale.max(f64::MIN_POSITIVE) || tss == 0.0 {
        return Err(Error::ZeroVariance(x.names()[feature].clone()));
    }

    let others: Vec<usize> = (0..p).filter(|&j| j != feature).collect();
    let mut design = DMatrix::<f64>::zeros(n, others.len());
    for (c, &j) in others.iter().enumerate() {
        for (r, v) in centered(j).enumerate() {
            design[(r, c)] = v;
        }
    }
    let qr = design.col_piv_qr();
    let r = qr.r();
    let q = qr.q();
    let lead = r[(0, 0)].abs();
    let rank = (0..r.nrows().min(r.ncols()))
        .take_while(|&i| lead > 0.0 && r[(i, i)].abs() > 1e-10 * lead)
        .count();

    let mut residual = y.clone();
    for c in 0..rank {
        let qc = q.column(c);
        let proj: f64 = qc.iter().zip(&y).map(|(a, b)| a * b).sum();
        for (res, qv) in residual.iter_mut().zip(qc.iter()) {
            *res -= proj * qv;
        }
    }
    let rss: f64 = residual.iter().map(|v| v * v).sum();
    let one_minus_r2 = rss / tss;
    if one_minus_r2 < PERFECT_FIT_TOL {
        Ok(f64::INFINITY)
    } else {
        Ok(1.0 / one_minus_r2)
    }
}

/// VIF for every column, in column order.
pub fn vif_all(x: &FeatureMatrix) -> Result<Vec<f64>> {
    (0..x.n_cols()).into_par_iter().map(|j| vif(x, j)).collect()
}

mod vif_value {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Finite(*v).serialize(s)
        } else {
            Repr::Text("inf".into()).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Finite(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad VIF `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVif {
    pub feature: String,
    #[serde(with = "vif_value")]
    pub vif: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifTrace {
    pub threshold: f64,
    /// Removal order, each with the VIF it had when removed.
    pub removed: Vec<FeatureVif>,
    /// VIF of each survivor in the final recomputation.
    pub survivors: Vec<FeatureVif>,
}

/// Repeatedly drops the single highest-VIF feature while any exceeds
/// `threshold`. Equal VIFs go to the lexicographically smaller name.
pub fn vif_prune(x: &FeatureMatrix, features: &[String], threshold: f64) -> Result<(Vec<String>, VifTrace)> {
    let mut current: Vec<String> = features.to_vec();
    let mut removed = Vec::new();
    loop {
        if current.len() < 2 {
            let survivors = current.iter().map(|f| FeatureVif { feature: f.clone(), vif: 1.0 }).collect();
            return Ok((current, VifTrace { threshold, removed, survivors }));
        }
        let sub = x.select_columns(&current)?;
        let vifs = vif_all(&sub)?;
        let worst = (0..current.len())
            .max_by(|&a, &b| vifs[a].total_cmp(&vifs[b]).then_with(|| current[b].cmp(&current[a])))
            .expect("non-empty");
        if vifs[worst] <= threshold {
            let survivors = current
                .iter()
                .zip(&vifs)
                .map(|(f, &v)| FeatureVif { feature: f.clone(), vif: v })
                .collect();
            return Ok((current, VifTrace { threshold, removed, survivors }));
        }
        removed.push(FeatureVif { feature: current.remove(worst), vif: vifs[worst] });
    }
}

/// A model family that can score feature importance after fitting.
pub trait ImportanceTrainer: Sync {
    fn describe(&self) -> String;
    /// One importance per column of `x`, larger is more important.
    fn importances(&self, x: &FeatureMatrix, y: &[u8]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elimination {
    pub round: usize,
    pub feature: String,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfeTrace {
    pub estimator: String,
    pub target_count: usize,
    pub step: usize,
    pub eliminated: Vec<Elimination>,
    pub retained: Vec<String>,
}

/// Recursive feature elimination: fit, drop the `step` least important
/// features (ties to the smaller name), repeat until `target_count` remain.
pub fn rfe(
    x: &FeatureMatrix,
    y: &[u8],
    features: &[String],
    trainer: &dyn ImportanceTrainer,
    target_count: usize,
    step: usize,
) -> Result<RfeTrace> {
    if target_count == 0 || step == 0 {
        return Err(Error::InvalidArgument("RFE needs target_count >= 1 and step >= 1".into()));
    }
    if target_count > features.len() {
        return Err(Error::InvalidArgument(format!(
            "RFE target {target_count} exceeds the {} available features",
            features.len()
        )));
    }
    let mut current = features.to_vec();
    let mut eliminated = Vec::new();
    let mut round = 0;
    while current.len() > target_count {
        let sub = x.select_columns(&current)?;
        let imp = trainer.importances(&sub, y)?;
        let mut order: Vec<usize> = (0..current.len()).collect();
        order.sort_by(|&a, &b| imp[a].total_cmp(&imp[b]).then_with(|| current[a].cmp(&current[b])));
        let n_drop = step.min(current.len() - target_count);
        let mut drop: Vec<usize> = order[..n_drop].to_vec();
        for &j in &drop {
            eliminated.push(Elimination { round, feature: current[j].clone(), importance: imp[j] });
        }
        drop.sort_unstable_by(|a, b| b.cmp(a));
        for j in drop {
            current.remove(j);
        }
        round += 1;
    }
    Ok(RfeTrace {
        estimator: trainer.describe(),
        target_count,
        step,
        eliminated,
        retained: current,
    })
}

/// `selected` followed by each `must_include` name not already present, in
/// the given order.
pub fn apply_overrides(selected: &[String], must_include: &[String], universe: &[String]) -> Result<Vec<String>> {
    let mut out = selected.to_vec();
    for name in must_include {
        if !universe.contains(name) {
            return Err(Error::UnknownColumn(name.clone()));
        }
        if !out.contains(name) {
            out.push(name.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub candidates: Vec<String>,
    pub vif: VifTrace,
    pub rfe: RfeTrace,
    /// Overrides that were actually added (not already selected).
    pub overrides_added: Vec<String>,
    pub final_set: Vec<String>,
}

/// Runs the three stages in order. RFE works on the VIF survivors; overrides
/// may re-add any candidate.
pub fn select_features(
    x: &FeatureMatrix,
    y: &[u8],
    candidates: &[String],
    vif_threshold: f64,
    trainer: &dyn ImportanceTrainer,
    rfe_target: Option<usize>,
    rfe_step: usize,
    overrides: &[String],
) -> Result<SelectionTrace> {
    let (survivors, vif_trace) = vif_prune(x, candidates, vif_threshold)?;
    let target = rfe_target.unwrap_or(survivors.len()).min(survivors.len());
    let rfe_trace = rfe(x, y, &survivors, trainer, target, rfe_step)?;
    let final_set = apply_overrides(&rfe_trace.retained, overrides, candidates)?;
    let overrides_added = final_set[rfe_trace.retained.len()..].to_vec();
    Ok(SelectionTrace {
        candidates: candidates.to_vec(),
        vif: vif_trace,
        rfe: rfe_trace,
        overrides_added,
        final_set,
    })
}
