use dbf::baselines::{
    bayes_fuse, fit_bayes, fit_platt, fit_ws_weights, platt_fuse, BayesHistogram, PlattOptions,
    WsModel, WsOptions, BAYES_BINS,
};
use dbf::fusion::DetectionCluster;
use dbf::{BBox, DetectionRecord, Scope};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn nll(scores: &[f64], labels: &[bool], a: f64, b: f64, l2: f64) -> f64 {
    scores
        .iter()
        .zip(labels)
        .map(|(&x, &y)| {
            let p = sigmoid(a * x + b).clamp(1e-300, 1.0 - 1e-16);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        + l2 * a * a
}

/// For fixed slope the optimal intercept solves sum(sigmoid) = sum(labels),
/// found by bisection; the profiled objective is then minimized over the
/// slope by golden-section search.
fn logistic_oracle(scores: &[f64], labels: &[bool], l2: f64) -> (f64, f64) {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let best_b = |a: f64| {
        let (mut lo, mut hi) = (-1e3, 1e3);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let s: f64 = scores.iter().map(|&x| sigmoid(a * x + mid)).sum();
            if s > pos {
                hi = mid
            } else {
                lo = mid
            }
        }
        0.5 * (lo + hi)
    };
    let f = |a: f64| nll(scores, labels, a, best_b(a), l2);
    let (mut lo, mut hi) = (-50.0f64, 50.0f64);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = hi - g * (hi - lo);
        let d = lo + g * (hi - lo);
        if f(c) < f(d) {
            hi = d
        } else {
            lo = c
        }
    }
    let a = 0.5 * (lo + hi);
    (a, best_b(a))
}

#[test]
fn platt_matches_independent_logistic_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..20 {
        let n = 50 + trial * 10;
        let shift = rng.random_range(0.5..3.0);
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let y = rng.random_bool(0.4);
            let x: f64 = rng.random_range(-2.0..2.0) + if y { shift } else { 0.0 };
            scores.push(x);
            labels.push(y);
        }
        let m = fit_platt(&scores, &labels, &PlattOptions::default()).unwrap();
        let (a, b) = logistic_oracle(&scores, &labels, 1e-6);
        assert!(
            (m.alpha - a).abs() < 1e-5 * a.abs().max(1.0),
            "alpha {} vs {a}",
            m.alpha
        );
        assert!(
            (m.alpha * m.beta - b).abs() < 1e-5 * b.abs().max(1.0),
            "intercept {} vs {b}",
            m.alpha * m.beta
        );
        assert!(m.alpha > 0.0);
    }
}

#[test]
fn platt_uninformative_labels_give_flat_calibration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scores: Vec<f64> = (0..4000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<bool> = (0..4000).map(|_| rng.random_bool(0.3)).collect();
    let m = fit_platt(&scores, &labels, &PlattOptions::default()).unwrap();
    assert!(m.alpha.abs() < 0.2, "alpha {}", m.alpha);
    assert!((m.calibrate(0.0) - 0.3).abs() < 0.03);
}

/// Dual coordinate descent for the hinge-loss SVM
/// `min 1/2 |w|^2 + C sum max(0, 1 - y w.x)` with a constant feature appended.
fn svm_oracle(x: &[Vec<f64>], y: &[bool], c: f64) -> Vec<f64> {
    let xs: Vec<Vec<f64>> = x
        .iter()
        .map(|v| v.iter().copied().chain([1.0]).collect())
        .collect();
    let d = xs[0].len();
    let mut w = vec![0.0; d];
    let mut alpha = vec![0.0; xs.len()];
    for _ in 0..2000 {
        for i in 0..xs.len() {
            let yi = if y[i] { 1.0 } else { -1.0 };
            let q: f64 = xs[i].iter().map(|v| v * v).sum();
            let g = yi * xs[i].iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - 1.0;
            let new = (alpha[i] - g / q).clamp(0.0, c);
            let delta = new - alpha[i];
            alpha[i] = new;
            for (wj, xj) in w.iter_mut().zip(&xs[i]) {
                *wj += delta * yi * xj;
            }
        }
    }
    w
}

fn svm_objective(x: &[Vec<f64>], y: &[bool], w: &[f64], bias: f64, c: f64) -> f64 {
    let reg = 0.5 * (w.iter().map(|v| v * v).sum::<f64>() + bias * bias);
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let s = xi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + bias;
            (1.0 - if yi { s } else { -s }).max(0.0)
        })
        .sum();
    reg + c * hinge
}

#[test]
fn ws_weights_agree_with_dual_solver() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for _ in 0..300 {
        let label = rng.random_bool(0.5);
        let informative = if label {
            rng.random_range(0.5..1.0)
        } else {
            rng.random_range(0.0..0.6)
        };
        x.push(vec![
            informative,
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
        ]);
        y.push(label);
    }
    let w = fit_ws_weights(&x, &y, &WsOptions::default()).unwrap();
    let oracle = svm_oracle(&x, &y, 1.0);
    let (ow, ob) = oracle.split_at(3);
    assert!(
        w[0] > 0.0 && w[0].abs() > 3.0 * w[1].abs() && w[0].abs() > 3.0 * w[2].abs(),
        "{w:?}"
    );
    let cos = w.iter().zip(ow).map(|(a, b)| a * b).sum::<f64>()
        / (w.iter().map(|v| v * v).sum::<f64>().sqrt()
            * ow.iter().map(|v| v * v).sum::<f64>().sqrt());
    assert!(cos > 0.99, "cosine {cos}: {w:?} vs {ow:?}");
    // the stochastic solution is near-optimal for the oracle's intercept
    let best = svm_objective(&x, &y, ow, ob[0], 1.0);
    let ours = svm_objective(&x, &y, &w, ob[0], 1.0);
    assert!(ours <= best * 1.05 + 1e-9, "{ours} vs {best}");
}

#[test]
fn ws_is_deterministic_and_rejects_one_class() {
    let x = vec![
        vec![0.1, 0.9],
        vec![0.8, 0.2],
        vec![0.7, 0.7],
        vec![0.2, 0.1],
    ];
    let y = vec![false, true, true, false];
    let opts = WsOptions::default();
    assert_eq!(
        fit_ws_weights(&x, &y, &opts).unwrap(),
        fit_ws_weights(&x, &y, &opts).unwrap()
    );
    assert!(fit_ws_weights(&x, &[true; 4], &opts).is_err());
}

#[test]
fn one_hot_ws_reproduces_platt_ranking() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let platt = dbf::baselines::PlattModel {
        alpha: 1.7,
        beta: -0.3,
    };
    let ws = WsModel {
        detector_ids: vec!["a".into(), "b".into()],
        weights: vec![1.0, 0.0],
    };
    let feats: Vec<(f64, f64)> = (0..200)
        .map(|_| (rng.random_range(-3.0..3.0), rng.random()))
        .collect();
    let mut by_ws: Vec<usize> = (0..feats.len()).collect();
    let mut by_platt = by_ws.clone();
    by_ws.sort_by(|&i, &j| {
        let f = |k: usize| ws.apply(&[platt.calibrate(feats[k].0), feats[k].1]);
        f(j).total_cmp(&f(i))
    });
    by_platt.sort_by(|&i, &j| {
        platt
            .calibrate(feats[j].0)
            .total_cmp(&platt.calibrate(feats[i].0))
    });
    assert_eq!(by_ws, by_platt);
}

fn cluster(scores: &[Option<f64>]) -> DetectionCluster {
    let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
    DetectionCluster {
        scope: Scope::new("i", "c"),
        anchor_slot: scores.iter().position(Option::is_some).unwrap(),
        anchor_index: 0,
        slots: scores
            .iter()
            .map(|s| s.map(|s| DetectionRecord::new("i", "c", b, s).unwrap()))
            .collect(),
    }
}

fn flat_histogram(t: f64, f: f64) -> BayesHistogram {
    BayesHistogram {
        min: 0.0,
        max: 1.0,
        target: vec![t; BAYES_BINS],
        non_target: vec![f; BAYES_BINS],
    }
}

#[test]
fn bayes_reference_values() {
    let h = flat_histogram(0.3, 0.1);
    assert!((bayes_fuse(&cluster(&[Some(0.5)]), &[Some(&h)]).unwrap() - 0.1).abs() < 1e-12);
    let h = flat_histogram(0.2, 0.1);
    let two = bayes_fuse(
        &cluster(&[Some(0.5), Some(0.6), None]),
        &[Some(&h), Some(&h), Some(&h)],
    )
    .unwrap();
    assert!((two - 0.015).abs() < 1e-12);
    let even = flat_histogram(0.2, 0.2);
    assert_eq!(
        bayes_fuse(&cluster(&[Some(0.1)]), &[Some(&even)]).unwrap(),
        0.0
    );
}

#[test]
fn bayes_histograms_are_smoothed_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scores: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..1.0)).collect();
    let labels: Vec<bool> = scores.iter().map(|&s| s > 0.7).collect();
    let h = fit_bayes(&scores, &labels).unwrap();
    for v in [&h.target, &h.non_target] {
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(v.iter().all(|&p| p > 0.0));
    }
    let (t_hi, f_hi) = h.likelihoods(0.99);
    let (t_lo, f_lo) = h.likelihoods(0.01);
    assert!(t_hi / f_hi > t_lo / f_lo);
    for s in [-5.0, 0.3, 5.0] {
        let v = bayes_fuse(&cluster(&[Some(s), Some(0.9)]), &[Some(&h), Some(&h)]).unwrap();
        assert!(v.abs() <= 0.5);
    }
    assert!(fit_bayes(&[0.5, 0.5], &[true, false]).is_err());
}

#[test]
fn platt_fuse_takes_the_maximum() {
    let lo = dbf::baselines::PlattModel {
        alpha: 1.0,
        beta: 0.0,
    };
    let v = platt_fuse(
        &cluster(&[Some(0.0), Some(2.0), None]),
        &[Some(&lo), Some(&lo), Some(&lo)],
    )
    .unwrap();
    assert!((v - sigmoid(2.0)).abs() < 1e-12);
}
