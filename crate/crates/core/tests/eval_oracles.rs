//! AUROC, thresholds, bootstrap and Welch p-values against direct oracles.

use icurisk_core::eval::{
    auroc, bootstrap_ci, roc_curve, threshold_metrics, welch_t_test, youden_threshold, WelchTest, SIGNIFICANCE_LEVEL,
};
use icurisk_core::Rng;
use proptest::prelude::*;
use rand::Rng as _;

fn pair_count(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn random_instance(rng: &mut Rng, max_n: usize) -> (Vec<f64>, Vec<u8>) {
    let n = rng.random_range(2..=max_n);
    let levels = if rng.random_bool(0.5) { rng.random_range(1..5) } else { 1_000_000 };
    let mut labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.3) as u8).collect();
    labels[0] = 1;
    labels[1] = 0;
    let scores = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
    (scores, labels)
}

#[test]
fn auroc_matches_pair_counting() {
    let mut rng = Rng::new(1);
    for case in 0..500 {
        let (s, l) = random_instance(&mut rng, 300);
        let a = auroc(&s, &l).unwrap();
        assert!((a - pair_count(&s, &l)).abs() < 1e-12, "case {case}");
        let trap = roc_curve(&s, &l).unwrap().area();
        assert!((trap - a).abs() < 1e-12, "trapezoid, case {case}");
    }
    assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
}

#[test]
fn youden_maximizes_j_over_all_cuts() {
    let mut rng = Rng::new(2);
    for _ in 0..200 {
        let (s, l) = random_instance(&mut rng, 80);
        let t = youden_threshold(&roc_curve(&s, &l).unwrap()).unwrap();
        let j = |thr: f64| {
            let m = threshold_metrics(&s, &l, thr).unwrap();
            m.sensitivity + m.specificity - 1.0
        };
        let mut distinct = s.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let best = distinct.iter().map(|&c| j(c)).fold(f64::NEG_INFINITY, f64::max);
        assert!((j(t) - best).abs() < 1e-12);
    }
}

#[test]
fn threshold_metrics_match_confusion_counts() {
    let s = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2];
    let l = [1, 1, 0, 1, 0, 0, 1, 0];
    let m = threshold_metrics(&s, &l, 0.6).unwrap();
    assert_eq!((m.tp, m.fp, m.tn, m.fn_), (3, 1, 3, 1));
    assert_eq!(m.accuracy, 6.0 / 8.0);
    assert_eq!(m.sensitivity, 0.75);
    assert_eq!(m.specificity, 0.75);
    assert_eq!(m.precision, Some(0.75));
    assert_eq!(threshold_metrics(&s, &l, 2.0).unwrap().precision, None);
}

#[test]
fn bootstrap_is_seeded_and_brackets_the_estimate() {
    let mut rng = Rng::new(3);
    let n = 400;
    let l: Vec<u8> = (0..n).map(|i| (i % 4 == 0) as u8).collect();
    let s: Vec<f64> = l.iter().map(|&y| y as f64 * 0.5 + rng.random::<f64>()).collect();
    let a = bootstrap_ci(&s, &l, 300, 0.95, &Rng::new(9)).unwrap();
    let b = bootstrap_ci(&s, &l, 300, 0.95, &Rng::new(9)).unwrap();
    assert_eq!(a, b);
    assert!(a.low <= a.point && a.point <= a.high);
    assert!(a.high - a.low > 0.01 && a.high - a.low < 0.3);
}

#[test]
fn bootstrap_covers_chance_on_null_scores() {
    // Scores independent of labels: the interval should cover 0.5 in the
    // large majority of replicates.
    let mut covered = 0;
    for rep in 0..40 {
        let mut rng = Rng::new(100 + rep);
        let l: Vec<u8> = (0..200).map(|i| (i % 3 == 0) as u8).collect();
        let s: Vec<f64> = (0..200).map(|_| rng.random()).collect();
        let ci = bootstrap_ci(&s, &l, 200, 0.95, &Rng::new(rep)).unwrap();
        if ci.low <= 0.5 && 0.5 <= ci.high {
            covered += 1;
        }
    }
    assert!(covered >= 34, "covered {covered}/40");
}

/// Two-sided Student-t tail probability by composite Simpson integration of
/// the density under `x = tan(theta)`, normalized numerically so no gamma
/// function is involved.
fn t_two_sided_oracle(t: f64, df: f64) -> f64 {
    let f = |theta: f64| {
        let x = theta.tan();
        let c = theta.cos();
        (1.0 + x * x / df).powf(-(df + 1.0) / 2.0) / (c * c)
    };
    let simpson = |a: f64, b: f64, n: usize| {
        let h = (b - a) / n as f64;
        let mut s = f(a) + if b < std::f64::consts::FRAC_PI_2 { f(b) } else { 0.0 };
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let half_pi = std::f64::consts::FRAC_PI_2;
    let upper = |a: f64| if df > 1.0 { simpson(a, half_pi, 200_000) } else { simpson(a, half_pi - 1e-9, 200_000) };
    let total = 2.0 * upper(0.0);
    2.0 * upper(t.abs().atan()) / total
}

#[test]
fn welch_p_values_match_integration_oracle() {
    let mut rng = Rng::new(4);
    for case in 0..100 {
        let na = rng.random_range(4..40);
        let nb = rng.random_range(4..40);
        let shift = rng.random_range(-1.5..1.5);
        let sb = rng.random_range(0.3..3.0);
        let a: Vec<f64> = (0..na).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..nb).map(|_| shift + sb * rng.random_range(-1.0..1.0)).collect();
        let w = welch_t_test(&a, &b).unwrap();
        let want = t_two_sided_oracle(w.t, w.df);
        assert!((w.p_value - want).abs() < 1e-6, "case {case}: {} vs {want} (t {}, df {})", w.p_value, w.t, w.df);
    }
}

#[test]
fn welch_edge_cases() {
    let a = [3.0, 1.0, 4.0, 1.0, 5.0];
    assert_eq!(welch_t_test(&a, &a).unwrap().p_value, 1.0);
    let at = |p: f64| WelchTest { t: 0.0, df: 1.0, p_value: p, mean_a: 0.0, mean_b: 0.0, degenerate: None };
    assert!(!at(SIGNIFICANCE_LEVEL).significant());
    assert!(at(SIGNIFICANCE_LEVEL.next_down()).significant());
    assert!(welch_t_test(&[1.0], &a).is_err());
}

proptest! {
    #[test]
    fn auroc_is_rank_invariant(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (s, l) = random_instance(&mut rng, 60);
        let a = auroc(&s, &l).unwrap();
        let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((auroc(&t, &l).unwrap() - a).abs() < 1e-12);
        let flipped: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((auroc(&flipped, &l).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn welch_is_antisymmetric(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let a: Vec<f64> = (0..10).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..12).map(|_| rng.random::<f64>() + 0.2).collect();
        let ab = welch_t_test(&a, &b).unwrap();
        let ba = welch_t_test(&b, &a).unwrap();
        prop_assert!((ab.t + ba.t).abs() < 1e-12);
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
    }
}
