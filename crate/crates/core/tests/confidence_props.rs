mod common;

use common::labeled_sequence;
use dbf::confidence::{operating_point_mass, static_bpa, ConfidenceModel, StaticAssignment};
use dbf::evaluation::compute_pr_curve;
use dbf::{Exponent, MassFunction, Observation};
use proptest::prelude::*;

fn arb_exponent() -> impl Strategy<Value = Exponent> {
    prop::sample::select(Exponent::default_grid())
}

/// Models from random ranked label sequences with at least two distinct scores.
fn arb_model() -> impl Strategy<Value = ConfidenceModel> {
    (
        prop::collection::vec(any::<bool>(), 2..40),
        0usize..5,
        arb_exponent(),
    )
        .prop_filter_map("needs a true positive", |(labels, extra, n)| {
            let n_tobj = labels.iter().filter(|&&l| l).count() + extra;
            if n_tobj == 0 {
                return None;
            }
            let curve = compute_pr_curve(&labeled_sequence(&labels), n_tobj).ok()?;
            ConfidenceModel::from_curve("d", "c", &curve, n).ok()
        })
}

fn assert_valid(m: &MassFunction) {
    let [t, f, i] = m.to_array();
    assert!((t + f + i - 1.0).abs() <= 1e-9, "{m:?}");
    for v in [t, f, i] {
        assert!((0.0..=1.0).contains(&v), "{m:?}");
    }
}

proptest! {
    #[test]
    fn assigned_masses_are_valid(model in arb_model(), score in -100.0..100.0f64) {
        assert_valid(&model.assign(Observation::Score(score)));
        let f = model.assign(Observation::Score(score)).fused_score();
        prop_assert!((-1.0..=1.0).contains(&f));
    }

    #[test]
    fn table_scores_return_their_entry(model in arb_model()) {
        for e in model.table() {
            let got = model.assign(Observation::Score(e.score)).to_array();
            for (g, w) in got.iter().zip(e.mass.to_array()) {
                prop_assert!((g - w).abs() <= 2e-6, "{got:?} vs {:?}", e.mass);
            }
        }
    }

    #[test]
    fn endpoints_clamp(model in arb_model()) {
        let table = model.table();
        let lo = model.assign(Observation::Score(-1e9)).to_array();
        let hi = model.assign(Observation::Score(1e9)).to_array();
        prop_assert_eq!(lo, model.assign(Observation::Score(table[0].score)).to_array());
        prop_assert_eq!(hi, model.assign(Observation::Score(table[table.len() - 1].score)).to_array());
    }

    #[test]
    fn absent_is_vacuous(model in arb_model()) {
        prop_assert_eq!(model.assign(Observation::Absent).to_array(), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn power_strictly_decreases_in_n(r in 0.01..0.99f64) {
        let grid = Exponent::default_grid();
        for w in grid.windows(2) {
            if let (Exponent::Finite(_), Exponent::Finite(_)) = (w[0], w[1]) {
                prop_assert!(w[1].recall_power(r) < w[0].recall_power(r));
            }
        }
        prop_assert_eq!(Exponent::Infinite.recall_power(r), 0.0);
    }

    #[test]
    fn operating_point_mass_is_valid(p in 0.0..=1.0f64, r in 0.0..=1.0f64, n in arb_exponent()) {
        assert_valid(&operating_point_mass(p, r, n));
    }
}

#[test]
fn model_json_shape() {
    let curve = compute_pr_curve(&labeled_sequence(&[true, false, true, true]), 4).unwrap();
    let model = ConfidenceModel::from_curve("det", "car", &curve, Exponent::Infinite).unwrap();
    let v: serde_json::Value = serde_json::to_value(&model).unwrap();
    assert_eq!(v["n"], "inf");
    let entry = &v["table"][0];
    for key in ["score", "mT", "mNotT", "mI"] {
        assert!(entry.get(key).is_some(), "missing {key}");
    }
    let back: ConfidenceModel = serde_json::from_value(v).unwrap();
    assert_eq!(back, model);
}

#[test]
fn single_score_is_insufficient() {
    let curve = compute_pr_curve(&labeled_sequence(&[true]), 1).unwrap();
    assert!(ConfidenceModel::from_curve("d", "c", &curve, Exponent::Finite(2.0)).is_err());
}

#[test]
fn static_assignment_at_operating_point() {
    // precision 0.8 is reached exactly where recall first hits 0.4
    let labels = [true, true, true, false, true, false];
    let curve = compute_pr_curve(&labeled_sequence(&labels), 10).unwrap();
    let n = Exponent::Finite(2.0);
    let s = StaticAssignment::new(&curve, n, 0.4).unwrap();
    let above = s.assign(Observation::Score(2.5)).to_array();
    for (a, b) in above.iter().zip([0.8, 0.16, 0.04]) {
        assert!((a - b).abs() < 1e-5, "{above:?}");
    }
    assert_eq!(
        s.assign(Observation::Score(1.5)).to_array(),
        [0.0, 0.0, 1.0]
    );
    assert_eq!(
        static_bpa(&curve, n, 1.0, 0.4).unwrap().to_array(),
        [0.0, 0.0, 1.0]
    );
    assert!(StaticAssignment::new(&curve, n, 0.0).is_err());
    assert!(StaticAssignment::new(&curve, n, 0.9).is_err());
}
