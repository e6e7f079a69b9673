//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use dbf::dataset::DetectionRecord;
use dbf::evaluation::{Label, LabeledDetection};
use dbf::{BBox, MassFunction};
use rand::Rng;

/// Dempster's rule by enumerating every combination of focal elements.
/// Subsets of {T, ¬T} are bitmasks: 1 = {T}, 2 = {¬T}, 3 = {T, ¬T}.
pub fn dempster_enumerate(masses: &[MassFunction]) -> [f64; 3] {
    let mut acc = [0.0f64; 4];
    let k = masses.len();
    for combo in 0..3usize.pow(k as u32) {
        let mut c = combo;
        let mut set = 3u8;
        let mut weight = 1.0;
        for m in masses {
            let focal = c % 3;
            c /= 3;
            let [t, nt, i] = m.to_array();
            let (bits, w) = match focal {
                0 => (1u8, t),
                1 => (2u8, nt),
                _ => (3u8, i),
            };
            set &= bits;
            weight *= w;
        }
        acc[set as usize] += weight;
    }
    let norm = 1.0 - acc[0];
    [acc[1] / norm, acc[2] / norm, acc[3] / norm]
}

/// A mass with every component at least 1e-6, summing to one.
pub fn random_floored_mass(rng: &mut impl Rng) -> MassFunction {
    let w: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    MassFunction::from_weights(w[0], w[1], w[2])
        .unwrap()
        .floored()
}

/// Labeled detections with strictly decreasing scores.
pub fn labeled_sequence(labels: &[bool]) -> Vec<LabeledDetection> {
    let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
    labels
        .iter()
        .enumerate()
        .map(|(i, &tp)| LabeledDetection {
            record: DetectionRecord::new("img", "c", b, (labels.len() - i) as f64).unwrap(),
            label: if tp {
                Label::TruePositive
            } else {
                Label::FalsePositive
            },
        })
        .collect()
}

/// Envelope AP from a ranked TP/FP list, summing over groundtruth index:
/// each of the `n_tobj` recall steps contributes the best precision among
/// ranks that have reached it.
pub fn ap_all_point_oracle(ranked: &[bool], n_tobj: usize) -> f64 {
    let prefix = prefix_counts(ranked);
    (1..=n_tobj)
        .map(|i| {
            prefix
                .iter()
                .filter(|&&(tp, _)| tp >= i)
                .map(|&(tp, n)| tp as f64 / n as f64)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / n_tobj as f64
}

/// Eleven-point AP with recall levels compared in integer arithmetic.
pub fn ap_eleven_point_oracle(ranked: &[bool], n_tobj: usize) -> f64 {
    let prefix = prefix_counts(ranked);
    (0..=10usize)
        .map(|t| {
            prefix
                .iter()
                .filter(|&&(tp, _)| tp * 10 >= t * n_tobj)
                .map(|&(tp, n)| tp as f64 / n as f64)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0
}

fn prefix_counts(ranked: &[bool]) -> Vec<(usize, usize)> {
    let mut tp = 0;
    ranked
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            tp += l as usize;
            (tp, i + 1)
        })
        .collect()
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}
