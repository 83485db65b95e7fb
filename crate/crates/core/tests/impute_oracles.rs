//! Imputation bands and KNN fills against a quadratic-scan oracle.

use icurisk_core::impute::{classify, fit_apply, plan, ActionKind, ColumnAction, ImputeOptions, Thresholds};
use icurisk_core::{Column, Dataset, FeatureDescriptor, FeatureKind, Rng};
use proptest::prelude::*;
use rand::Rng as _;

fn numeric(cells: Vec<Vec<Option<f64>>>) -> Dataset {
    let n = cells[0].len();
    let schema = (0..cells.len()).map(|j| FeatureDescriptor::numeric(format!("c{j}"), "lab")).collect();
    let columns = cells.iter().map(|c| Column::from_options(c)).collect();
    Dataset::new(schema, columns, None, (0..n).map(|i| format!("r{i}")).collect()).unwrap()
}

fn with_missing(n: usize, missing: usize, categorical: bool) -> Vec<Option<f64>> {
    (0..n)
        .map(|i| if i < missing { None } else if categorical { Some((i % 3) as f64) } else { Some(i as f64) })
        .collect()
}

#[test]
fn band_table() {
    let n = 1000;
    let fractions = [0.0, 0.20, 0.201, 0.50, 0.501];
    let numeric_want = [ActionKind::Mean, ActionKind::Mean, ActionKind::Knn, ActionKind::Knn, ActionKind::Drop];
    let categorical_want = [ActionKind::Mode, ActionKind::Mode, ActionKind::Drop, ActionKind::Drop, ActionKind::Drop];
    let mut schema = Vec::new();
    let mut columns = Vec::new();
    for (i, f) in fractions.iter().enumerate() {
        let missing = (f * n as f64).round() as usize;
        schema.push(FeatureDescriptor::numeric(format!("num{i}"), ""));
        columns.push(Column::from_options(&with_missing(n, missing, false)));
        schema.push(FeatureDescriptor::categorical(format!("cat{i}"), "", vec!["a".into(), "b".into(), "c".into()]));
        columns.push(Column::from_options(&with_missing(n, missing, true)));
    }
    let d = Dataset::new(schema, columns, None, (0..n).map(|i| i.to_string()).collect()).unwrap();
    let rows: Vec<usize> = (0..n).collect();
    let p = plan(&d, &rows, &ImputeOptions::default(), "all").unwrap();
    for i in 0..fractions.len() {
        assert_eq!(p.columns[2 * i].action.kind(), numeric_want[i], "numeric at {}", fractions[i]);
        assert_eq!(p.columns[2 * i + 1].action.kind(), categorical_want[i], "categorical at {}", fractions[i]);
    }
    let t = Thresholds::default();
    for (f, want) in fractions.iter().zip(numeric_want) {
        assert_eq!(classify(FeatureKind::Numeric, *f, &t), want);
    }
}

/// Mean and sample sd over the observed fitting rows.
fn fit_stats(col: &[Option<f64>], fit: &[usize]) -> (f64, f64) {
    let v: Vec<f64> = fit.iter().filter_map(|&r| col[r]).collect();
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt();
    (m, if s > 0.0 { s } else { 1.0 })
}

/// Quadratic scan over every fitting row for every missing cell.
fn knn_oracle(cells: &[Vec<Option<f64>>], kept: &[usize], target: usize, fit: &[usize], k: usize) -> Vec<f64> {
    let stats: Vec<(f64, f64)> = cells.iter().map(|c| fit_stats(c, fit)).collect();
    let z = |c: usize, r: usize| cells[c][r].map(|v| (v - stats[c].0) / stats[c].1);
    let comparison: Vec<usize> = kept.iter().copied().filter(|&c| c != target).collect();
    let total = comparison.len() as f64;
    let n = cells[target].len();
    (0..n)
        .map(|row| {
            if let Some(v) = cells[target][row] {
                return v;
            }
            let mut dists: Vec<(f64, usize)> = Vec::new();
            for &donor in fit {
                if cells[target][donor].is_none() {
                    continue;
                }
                let mut ss = 0.0;
                let mut shared = 0;
                for &c in &comparison {
                    if let (Some(a), Some(b)) = (z(c, row), z(c, donor)) {
                        ss += (a - b) * (a - b);
                        shared += 1;
                    }
                }
                if shared > 0 {
                    dists.push((ss * total / shared as f64, donor));
                }
            }
            if dists.is_empty() {
                return stats[target].0;
            }
            dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let take = k.min(dists.len());
            dists[..take].iter().map(|&(_, d)| cells[target][d].unwrap()).sum::<f64>() / take as f64
        })
        .collect()
}

#[test]
fn knn_fills_match_quadratic_scan() {
    let mut rng = Rng::new(21);
    let mut knn_columns = 0;
    for case in 0..100 {
        let n = rng.random_range(20..120);
        let d = rng.random_range(2..6);
        let cells: Vec<Vec<Option<f64>>> = (0..d)
            .map(|_| {
                let rate = rng.random_range(0.0..0.45);
                (0..n)
                    .map(|_| if rng.random::<f64>() < rate { None } else { Some(rng.random_range(-3.0..3.0)) })
                    .collect()
            })
            .collect();
        let dataset = numeric(cells.clone());
        let fit: Vec<usize> = (0..n * 3 / 4).collect();
        let k = rng.random_range(1..6);
        let options = ImputeOptions { k, ..ImputeOptions::default() };
        let policy = plan(&dataset, &fit, &options, "train").unwrap();
        let kept: Vec<usize> =
            (0..d).filter(|&c| !matches!(policy.columns[c].action, ColumnAction::Drop)).collect();
        let donors_ok = kept.iter().all(|&c| {
            !matches!(policy.columns[c].action, ColumnAction::Knn { .. })
                || fit.iter().filter(|&&r| cells[c][r].is_some()).count() >= k
        });
        if !donors_ok || kept.is_empty() {
            continue;
        }
        let (out, _) = fit_apply(&dataset, &policy, &fit).unwrap();
        for (pos, &c) in kept.iter().enumerate() {
            let got: Vec<f64> = (0..n).map(|r| out.column(pos).get(r).unwrap()).collect();
            let want: Vec<f64> = match policy.columns[c].action {
                ColumnAction::Knn { .. } => {
                    knn_columns += 1;
                    knn_oracle(&cells, &kept, c, &fit, k)
                }
                _ => {
                    let m = fit_stats(&cells[c], &fit).0;
                    cells[c].iter().map(|v| v.unwrap_or(m)).collect()
                }
            };
            for r in 0..n {
                assert!((got[r] - want[r]).abs() <= 1e-12 * want[r].abs().max(1.0), "case {case} col {c} row {r}");
            }
        }
    }
    assert!(knn_columns >= 50, "only {knn_columns} KNN columns exercised");
}

#[test]
fn test_rows_do_not_influence_fills() {
    let mut rng = Rng::new(4);
    let n = 80;
    let cells: Vec<Vec<Option<f64>>> = (0..3)
        .map(|_| (0..n).map(|_| if rng.random::<f64>() < 0.3 { None } else { Some(rng.random::<f64>()) }).collect())
        .collect();
    let fit: Vec<usize> = (0..60).collect();
    let base = numeric(cells.clone());
    let mut shifted_cells = cells.clone();
    for c in shifted_cells.iter_mut() {
        for v in c.iter_mut().skip(60) {
            if let Some(x) = v {
                *x += 100.0;
            }
        }
    }
    let shifted = numeric(shifted_cells);
    let opts = ImputeOptions::default();
    let p1 = plan(&base, &fit, &opts, "train").unwrap();
    let p2 = plan(&shifted, &fit, &opts, "train").unwrap();
    assert_eq!(p1, p2);
    let (a, _) = fit_apply(&base, &p1, &fit).unwrap();
    let (b, _) = fit_apply(&shifted, &p2, &fit).unwrap();
    for j in 0..a.n_features() {
        for r in 0..60 {
            assert_eq!(a.column(j).get(r), b.column(j).get(r));
        }
    }
}

proptest! {
    #[test]
    fn output_is_complete_and_keeps_observed(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let n = 40;
        let cells: Vec<Vec<Option<f64>>> = (0..3)
            .map(|_| (0..n).map(|_| if rng.random::<f64>() < 0.3 { None } else { Some(rng.random::<f64>()) }).collect())
            .collect();
        let d = numeric(cells.clone());
        let fit: Vec<usize> = (0..30).collect();
        let p = plan(&d, &fit, &ImputeOptions::default(), "train").unwrap();
        let Ok((out, _)) = fit_apply(&d, &p, &fit) else { return Ok(()); };
        prop_assert!(out.is_complete());
        let kept = p.kept_columns();
        for (pos, name) in kept.iter().enumerate() {
            let src = d.column_index(name).unwrap();
            for r in 0..n {
                if let Some(v) = cells[src][r] {
                    prop_assert_eq!(out.column(pos).get(r), Some(v));
                }
            }
        }
    }
}
