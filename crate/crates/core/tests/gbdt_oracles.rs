//! Boosting checks: derivatives, monotone training loss, exhaustive split
//! search, hand-derived stumps, early stopping, replay and grid prefixes.

use icurisk_core::eval::auroc;
use icurisk_core::gbdt::{
    grid_search, grow, logistic_grad_hess, logistic_loss, presort, stratified_folds, train, EarlyStopping, GridSpec,
    Node, RegressionTree, TrainConfig, TreeParams,
};
use icurisk_core::synth::{generate, GeneratorSpec};
use icurisk_core::{FeatureMatrix, Rng};
use proptest::prelude::*;
use rand::Rng as _;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-3)
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = Rng::new(1);
    for _ in 0..1000 {
        let m: f64 = rng.random_range(-8.0..8.0);
        let y = rng.random_range(0..2) as f64;
        let h = 1e-5;
        let fd_g = (logistic_loss(m + h, y) - logistic_loss(m - h, y)) / (2.0 * h);
        let h2 = 1e-4;
        let fd_h = (logistic_loss(m + h2, y) - 2.0 * logistic_loss(m, y) + logistic_loss(m - h2, y)) / (h2 * h2);
        let (g, hs) = logistic_grad_hess(m, y);
        assert!(rel_close(g, fd_g, 1e-6), "grad at m={m}: {g} vs {fd_g}");
        // The second difference loses about half the digits; a central
        // difference of the analytic gradient gives the tighter check.
        let fd_h2 = (logistic_grad_hess(m + h, y).0 - logistic_grad_hess(m - h, y).0) / (2.0 * h);
        assert!(rel_close(hs, fd_h2, 1e-6), "hess at m={m}: {hs} vs {fd_h2}");
        assert!((hs - fd_h).abs() < 1e-5, "second difference at m={m}: {hs} vs {fd_h}");
    }
}

fn synthetic_cohort(n: usize) -> (FeatureMatrix, Vec<u8>) {
    let (d, _) = generate(&GeneratorSpec::cohort(n, 42).complete()).unwrap();
    (d.to_matrix(&d.feature_names()).unwrap(), d.labels().unwrap().to_vec())
}

#[test]
fn training_loss_never_increases() {
    let (x, y) = synthetic_cohort(9474);
    let config = TrainConfig { n_estimators: 200, subsample: 1.0, colsample_bytree: 1.0, ..TrainConfig::default() };
    let (_, trace) = train(&x, &y, &config, None).unwrap();
    assert_eq!(trace.train_logloss.len(), 200);
    for w in trace.train_logloss.windows(2) {
        assert!(w[1] <= w[0], "{} -> {}", w[0], w[1]);
    }
}

fn gain(gl: f64, hl: f64, g: f64, h: f64, p: &TreeParams) -> f64 {
    let t = |v: f64| v.signum() * (v.abs() - p.alpha).max(0.0);
    let score = |g: f64, h: f64| t(g).powi(2) / (h + p.lambda);
    0.5 * (score(gl, hl) + score(g - gl, h - hl) - score(g, h)) - p.gamma
}

/// Best `(gain, feature, threshold)` among valid splits of `rows`, found by
/// trying every cut between consecutive distinct values.
fn exhaustive(x: &[Vec<f64>], grad: &[f64], hess: &[f64], rows: &[usize], p: &TreeParams) -> Vec<(f64, usize, f64)> {
    let g: f64 = rows.iter().map(|&r| grad[r]).sum();
    let h: f64 = rows.iter().map(|&r| hess[r]).sum();
    let mut out = Vec::new();
    for (f, col) in x.iter().enumerate() {
        let mut vals: Vec<f64> = rows.iter().map(|&r| col[r]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let thr = w[0] + (w[1] - w[0]) / 2.0;
            let left: Vec<usize> = rows.iter().copied().filter(|&r| col[r] < thr).collect();
            let gl: f64 = left.iter().map(|&r| grad[r]).sum();
            let hl: f64 = left.iter().map(|&r| hess[r]).sum();
            if hl < p.min_child_weight || h - hl < p.min_child_weight {
                continue;
            }
            let v = gain(gl, hl, g, h, p);
            if v > 0.0 {
                out.push((v, f, thr));
            }
        }
    }
    out
}

fn check_node(
    tree: &RegressionTree,
    node: usize,
    depth: usize,
    rows: Vec<usize>,
    ctx: (&[Vec<f64>], &[f64], &[f64], &TreeParams),
) {
    let (x, grad, hess, p) = ctx;
    let cands = exhaustive(x, grad, hess, &rows, p);
    let best = cands.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    match &tree.nodes[node] {
        Node::Leaf { value, cover } => {
            assert_eq!(*cover, rows.len() as f64);
            assert!(depth == p.max_depth || cands.is_empty(), "leaf at depth {depth} but a split of gain {best} exists");
            let g: f64 = rows.iter().map(|&r| grad[r]).sum();
            let h: f64 = rows.iter().map(|&r| hess[r]).sum();
            let t = g.signum() * (g.abs() - p.alpha).max(0.0);
            assert!(rel_close(*value, -t / (h + p.lambda) * p.eta, 1e-12));
        }
        Node::Split { feature, threshold, left, right, gain: g, cover } => {
            assert_eq!(*cover, rows.len() as f64);
            assert!(rel_close(*g, best, 1e-9), "gain {g} vs exhaustive {best}");
            assert!(
                cands.iter().any(|c| c.1 == *feature && c.2 == *threshold && rel_close(c.0, best, 1e-9)),
                "split ({feature}, {threshold}) is not an optimal candidate"
            );
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[*feature][i] < *threshold);
            check_node(tree, *left, depth + 1, l, ctx);
            check_node(tree, *right, depth + 1, r, ctx);
        }
    }
}

#[test]
fn splits_equal_exhaustive_enumeration() {
    let mut rng = Rng::new(2);
    for _ in 0..300 {
        let n = rng.random_range(4..=64);
        let d = rng.random_range(1..=3);
        let integer = rng.random_bool(0.5);
        let x: Vec<Vec<f64>> = (0..d)
            .map(|_| {
                (0..n)
                    .map(|_| if integer { rng.random_range(0..6) as f64 } else { rng.random_range(-2.0..2.0) })
                    .collect()
            })
            .collect();
        let grad: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hess: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.25)).collect();
        let params = TreeParams {
            max_depth: rng.random_range(1..=4),
            lambda: rng.random_range(0.0..1.0),
            alpha: rng.random_range(0.0..0.2),
            gamma: rng.random_range(0.0..0.05),
            min_child_weight: rng.random_range(0.0..1.0),
            eta: 0.3,
        };
        let names = (0..d).map(|j| format!("f{j}")).collect();
        let fm = FeatureMatrix::from_columns(names, x.clone()).unwrap();
        let tree = grow(&fm, &presort(&fm), &grad, &hess, &vec![true; n], &(0..d).collect::<Vec<_>>(), &params);
        check_node(&tree, 0, 0, (0..n).collect(), (&x, &grad, &hess, &params));
    }
}

#[test]
fn first_round_stump_matches_hand_derivation() {
    // Twelve rows, perfectly separated at x = 6.5. With base score 0.5 every
    // gradient is 0.5 - y and every hessian 0.25, so each side has |G| = 3,
    // H = 1.5.
    let x = FeatureMatrix::from_columns(vec!["x".into()], vec![(1..=12).map(f64::from).collect()]).unwrap();
    let y: Vec<u8> = (1..=12).map(|v| (v > 6) as u8).collect();
    let config = TrainConfig {
        n_estimators: 1,
        max_depth: 1,
        subsample: 1.0,
        colsample_bytree: 1.0,
        ..TrainConfig::default()
    };
    let (model, _) = train(&x, &y, &config, None).unwrap();
    let tree = &model.trees[0];
    let Node::Split { threshold, left, right, .. } = tree.nodes[0] else { panic!("root should split") };
    assert_eq!(threshold, 6.5);
    let value = |i: usize| match tree.nodes[i] {
        Node::Leaf { value, .. } => value,
        _ => panic!("stump children are leaves"),
    };
    // w = -(|G| - alpha) sign(G) / (H + lambda), times eta = 0.025.
    let w_left = -(3.0 - 0.05) / (1.5 + 0.08) * 0.025;
    assert!((value(left) - w_left).abs() < 1e-15);
    assert!((value(right) + w_left).abs() < 1e-15);
}

#[test]
fn early_stopping_halts_after_the_eval_minimum() {
    // Pure-noise labels: any fit to the training rows hurts the eval rows, so
    // eval loss has to turn upward.
    let mut rng = Rng::new(3);
    let make = |rng: &mut Rng, n: usize| {
        let cols: Vec<Vec<f64>> = (0..5).map(|_| (0..n).map(|_| rng.random()).collect()).collect();
        let y: Vec<u8> = (0..n).map(|_| rng.random_bool(0.4) as u8).collect();
        (FeatureMatrix::from_columns((0..5).map(|j| format!("f{j}")).collect(), cols).unwrap(), y)
    };
    let (x, y) = make(&mut rng, 400);
    let (ex, ey) = make(&mut rng, 400);
    let config = TrainConfig {
        eta: 0.3,
        max_depth: 6,
        n_estimators: 500,
        base_score: 0.4,
        early_stopping: EarlyStopping { patience: 10, min_delta: 1e-4, keep_best: true },
        ..TrainConfig::default()
    };
    let (model, trace) = train(&x, &y, &config, Some((&ex, &ey))).unwrap();
    assert!(trace.stopped_early);
    let best = trace.best_iteration.unwrap();
    let min = trace.eval_logloss.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(trace.eval_logloss[best], min);
    assert_eq!(trace.eval_logloss.iter().position(|&v| v == min), Some(best));
    assert!(trace.rounds - 1 - best <= 10, "stopped at {} after best {best}", trace.rounds - 1);
    assert!(*trace.eval_logloss.last().unwrap() > min);
    assert_eq!(model.trees.len(), best + 1);
}

fn walk(tree: &RegressionTree, row: &[f64]) -> f64 {
    let mut i = 0;
    loop {
        match &tree.nodes[i] {
            Node::Leaf { value, .. } => return *value,
            Node::Split { feature, threshold, left, right, .. } => {
                i = if row[*feature] < *threshold { *left } else { *right };
            }
        }
    }
}

#[test]
fn predictions_replay_from_the_serialized_trees() {
    let (x, y) = synthetic_cohort(1500);
    let config = TrainConfig { n_estimators: 60, ..TrainConfig::default() };
    let (model, _) = train(&x, &y, &config, None).unwrap();
    let json = serde_json::to_string(&model).unwrap();
    let back: icurisk_core::gbdt::Ensemble = serde_json::from_str(&json).unwrap();
    assert_eq!(back, model);
    let margin = model.predict_margin(&x).unwrap();
    for (i, &m) in margin.iter().enumerate() {
        let row = x.row(i);
        let want = model.base_margin + model.trees.iter().map(|t| walk(t, &row)).sum::<f64>();
        assert!((m - want).abs() < 1e-12);
    }
}

#[test]
fn training_is_thread_count_independent() {
    let (x, y) = synthetic_cohort(1000);
    let config = TrainConfig { n_estimators: 30, ..TrainConfig::default() };
    let fit = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| serde_json::to_string(&train(&x, &y, &config, None).unwrap().0).unwrap())
    };
    assert_eq!(fit(1), fit(4));
}

#[test]
fn grid_cells_equal_direct_training() {
    let (x, y) = synthetic_cohort(600);
    let grid = GridSpec {
        eta: vec![0.1, 0.3],
        max_depth: vec![2, 3],
        n_estimators: vec![5, 20],
        folds: 3,
        ..GridSpec::default()
    };
    let result = grid_search(&x, &y, &grid, &mut Rng::new(7)).unwrap();
    assert_eq!(result.cells.len(), 8);
    let folds = stratified_folds(&y, 3, &mut Rng::new(7));
    let cell = result.cells.iter().find(|c| c.eta == 0.3 && c.max_depth == 2 && c.n_estimators == 5).unwrap();
    for f in 0..3 {
        let (val, tr): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| folds[i] == f);
        let yt: Vec<u8> = tr.iter().map(|&i| y[i]).collect();
        let yv: Vec<u8> = val.iter().map(|&i| y[i]).collect();
        let config = TrainConfig { eta: 0.3, max_depth: 2, n_estimators: 5, ..grid.base.clone() };
        let (m, _) = train(&x.select_rows(&tr), &yt, &config, None).unwrap();
        let score = auroc(&m.predict_margin(&x.select_rows(&val)).unwrap(), &yv).unwrap();
        assert_eq!(score, cell.fold_scores[f]);
    }
    let best_mean = result.cells.iter().map(|c| c.mean).fold(f64::NEG_INFINITY, f64::max);
    let winner = result
        .cells
        .iter()
        .find(|c| c.eta == result.best.eta && c.max_depth == result.best.max_depth && c.n_estimators == result.best.n_estimators)
        .unwrap();
    assert_eq!(winner.mean, best_mean);
}

#[test]
fn single_class_needs_explicit_opt_in() {
    let x = FeatureMatrix::from_columns(vec!["x".into()], vec![vec![1.0, 2.0, 3.0]]).unwrap();
    assert!(train(&x, &[0, 0, 0], &TrainConfig::default(), None).is_err());
    let config = TrainConfig { allow_single_class: true, n_estimators: 5, ..TrainConfig::default() };
    let (m, _) = train(&x, &[0, 0, 0], &config, None).unwrap();
    assert!(m.predict_proba(&x).unwrap().iter().all(|&p| p < 0.5));
}

proptest! {
    #[test]
    fn probabilities_stay_in_the_unit_interval(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let n = 50;
        let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.random_range(-1e3..1e3)).collect()).collect();
        let mut y: Vec<u8> = (0..n).map(|_| rng.random_bool(0.3) as u8).collect();
        y[0] = 1;
        y[1] = 0;
        let x = FeatureMatrix::from_columns((0..3).map(|j| format!("f{j}")).collect(), cols).unwrap();
        let config = TrainConfig { n_estimators: 20, eta: 0.5, seed, ..TrainConfig::default() };
        let (m, _) = train(&x, &y, &config, None).unwrap();
        for p in m.predict_proba(&x).unwrap() {
            prop_assert!(p > 0.0 && p < 1.0);
        }
    }
}
