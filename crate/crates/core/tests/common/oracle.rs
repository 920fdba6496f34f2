//! Brute-force reimplementations of the metrics, compared on small random
//! instances with ties.

use edain::data::rng_from_seed;
use edain::metrics::{
    amex_metric, cohen_kappa, default_rate_captured, macro_f1, weighted_gini, AmexInputs, GiniOrdering,
};
use rand::Rng as _;

pub const INSTANCES: usize = 2000;
pub const TOL: f64 = 1e-12;

/// Position of `i` when sorted by `key` (ascending or descending), ties going
/// to the smaller index. Quadratic, no sorting.
fn rank(key: &[f64], i: usize, descending: bool) -> usize {
    (0..key.len())
        .filter(|&j| {
            let before = if descending { key[j] > key[i] } else { key[j] < key[i] };
            before || (key[j] == key[i] && j < i)
        })
        .count()
}

fn brute_d(p: &[f64], y: &[usize], w: &[f64]) -> f64 {
    let n = p.len();
    let total: f64 = w.iter().sum();
    let positives = y.iter().sum::<usize>() as f64;
    let ranks: Vec<usize> = (0..n).map(|i| rank(p, i, true)).collect();
    let mut captured = 0.0;
    for i in 0..n {
        let upto: f64 = (0..n).filter(|&j| ranks[j] <= ranks[i]).map(|j| w[j] / total).sum();
        if upto <= 0.04 + 1e-12 {
            captured += y[i] as f64;
        }
    }
    captured / positives
}

fn brute_gini(key: &[f64], y: &[usize], w: &[f64]) -> f64 {
    let n = key.len();
    let total: f64 = w.iter().sum();
    let w: Vec<f64> = w.iter().map(|v| v / total).collect();
    let ranks: Vec<usize> = (0..n).map(|i| rank(key, i, false)).collect();
    let f: Vec<f64> = (0..n)
        .map(|i| w[i] / 2.0 + (0..n).filter(|&j| ranks[j] < ranks[i]).map(|j| w[j]).sum::<f64>())
        .collect();
    let ybar: f64 = (0..n).map(|i| w[i] * y[i] as f64).sum();
    let fbar: f64 = (0..n).map(|i| w[i] * f[i]).sum();
    2.0 * (0..n).map(|i| w[i] * (y[i] as f64 - ybar) / ybar * (f[i] - fbar)).sum::<f64>()
}

fn brute_kappa(p: &[usize], t: &[usize], classes: usize) -> f64 {
    let n = p.len() as f64;
    let po = p.iter().zip(t).filter(|(a, b)| a == b).count() as f64 / n;
    let pe: f64 = (0..classes)
        .map(|k| {
            let a = p.iter().filter(|&&v| v == k).count() as f64 / n;
            let b = t.iter().filter(|&&v| v == k).count() as f64 / n;
            a * b
        })
        .sum();
    if (1.0 - pe).abs() < 1e-15 {
        return if po == 1.0 { 1.0 } else { 0.0 };
    }
    (po - pe) / (1.0 - pe)
}

fn brute_macro_f1(p: &[usize], t: &[usize], classes: usize) -> f64 {
    let mut sum = 0.0;
    for k in 0..classes {
        let tp = p.iter().zip(t).filter(|&(&a, &b)| a == k && b == k).count() as f64;
        let pp = p.iter().filter(|&&a| a == k).count() as f64;
        let ap = t.iter().filter(|&&b| b == k).count() as f64;
        if tp > 0.0 {
            let (prec, rec) = (tp / pp, tp / ap);
            sum += 2.0 * prec * rec / (prec + rec);
        }
    }
    sum / classes as f64
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * 1f64.max(a.abs())
}

pub fn amex_matches_brute_force() {
    let mut rng = rng_from_seed(5);
    let mut checked = 0;
    while checked < INSTANCES {
        let n = rng.gen_range(2..=12);
        // Coarse prediction grid to force ties.
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect();
        let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let w: Vec<f64> = if rng.gen_bool(0.5) {
            vec![1.0; n]
        } else {
            (0..n).map(|_| rng.gen_range(0.01..1.0)).collect()
        };
        let npos = y.iter().sum::<usize>();
        if npos == 0 || npos == n {
            continue;
        }
        let inputs = AmexInputs::with_weights(p.clone(), y.clone(), w.clone()).unwrap();
        let yk: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let d = default_rate_captured(&inputs).unwrap();
        let g0 = weighted_gini(&inputs, GiniOrdering::Labels).unwrap();
        let g1 = weighted_gini(&inputs, GiniOrdering::Predictions).unwrap();
        let (bd, bg0, bg1) = (brute_d(&p, &y, &w), brute_gini(&yk, &y, &w), brute_gini(&p, &y, &w));
        assert!(close(d, bd), "D {d} vs {bd} for {p:?} {y:?} {w:?}");
        assert!(close(g0, bg0), "G0 {g0} vs {bg0}");
        assert!(close(g1, bg1), "G1 {g1} vs {bg1}");
        let m = amex_metric(&inputs).unwrap().m;
        assert!(close(m, 0.5 * (bg1 / bg0 + bd)));
        checked += 1;
    }
}

pub fn kappa_and_macro_f1_match_brute_force() {
    let mut rng = rng_from_seed(6);
    for _ in 0..INSTANCES {
        let n = rng.gen_range(1..=12);
        let classes = rng.gen_range(2..=4);
        let p: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let t: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let k = cohen_kappa(&p, &t, classes).unwrap();
        let f = macro_f1(&p, &t, classes).unwrap();
        assert!(close(k, brute_kappa(&p, &t, classes)), "kappa {k} for {p:?} {t:?}");
        assert!(close(f, brute_macro_f1(&p, &t, classes)), "macro-F1 {f} for {p:?} {t:?}");
    }
}
