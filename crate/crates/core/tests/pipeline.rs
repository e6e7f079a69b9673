use std::collections::BTreeSet;

use dbf::evaluation::{evaluate, label_category, ApMode};
use dbf::pipeline::{
    run_experiment, tune_n, ExperimentOptions, ExponentChoice, Method, Thresholds,
};
use dbf::synth::{generate_world, ObjectCount, SynthDetectorProfile, SynthWorldConfig};
use dbf::{BBox, ConfidenceModel, DetectionRecord, DetectorDump, Exponent, GroundTruthRecord};

fn profile(id: &str, recall: f64, loc: f64, fp: f64, tp_mean: f64) -> SynthDetectorProfile {
    SynthDetectorProfile {
        id: id.into(),
        recall_rate: recall,
        loc_sigma: loc,
        fp_per_image: fp,
        tp_score_mean: tp_mean,
        fp_score_mean: 0.0,
        score_sigma: 1.0,
    }
}

fn world(detectors: Vec<SynthDetectorProfile>, seed: u64) -> dbf::synth::SynthWorld {
    generate_world(&SynthWorldConfig {
        n_images: 300,
        objects_per_image: ObjectCount::Uniform { min: 1, max: 4 },
        image_width: 640.0,
        image_height: 480.0,
        min_box_size: 32.0,
        max_box_size: 128.0,
        categories: vec!["a".into()],
        detectors,
        seed,
    })
    .unwrap()
}

fn selected(detectors: Vec<SynthDetectorProfile>) -> Exponent {
    let w = world(detectors, 5);
    let cats = BTreeSet::from(["a".to_string()]);
    let report = tune_n(
        &w.dumps,
        &w.groundtruth,
        &cats,
        &Exponent::default_grid(),
        &Thresholds::default(),
        ApMode::AllPoint,
        0,
    )
    .unwrap();
    report.selected("a").unwrap()
}

#[test]
fn near_perfect_pool_prefers_large_n() {
    // With precision pinned at 1 every exponent gives the same masses and the
    // tie goes to n = 1, so the pool is strong but not saturated.
    let n = selected(vec![
        profile("x", 0.97, 2.0, 1.0, 3.0),
        profile("y", 0.97, 2.0, 1.0, 3.0),
        profile("z", 0.97, 2.0, 1.0, 3.0),
    ]);
    assert!(n.as_f64() >= 8.0, "selected {n}");
}

#[test]
fn weak_pool_prefers_finite_n() {
    let n = selected(vec![
        profile("x", 0.6, 8.0, 8.0, 1.0),
        profile("y", 0.6, 8.0, 8.0, 1.0),
        profile("z", 0.6, 8.0, 8.0, 1.0),
    ]);
    assert!(n != Exponent::Infinite, "selected {n}");
}

#[test]
fn single_point_grid_returns_it() {
    let w = world(
        vec![
            profile("x", 0.9, 2.0, 1.0, 2.0),
            profile("y", 0.9, 2.0, 1.0, 2.0),
        ],
        1,
    );
    let cats = BTreeSet::from(["a".to_string()]);
    let grid = [Exponent::Finite(4.0)];
    let r = tune_n(
        &w.dumps,
        &w.groundtruth,
        &cats,
        &grid,
        &Thresholds::default(),
        ApMode::AllPoint,
        0,
    )
    .unwrap();
    assert_eq!(r.selected("a"), Some(Exponent::Finite(4.0)));
    assert!(tune_n(
        &w.dumps,
        &w.groundtruth,
        &cats,
        &[],
        &Thresholds::default(),
        ApMode::AllPoint,
        0
    )
    .is_err());
    assert!(tune_n(
        &w.dumps[..1],
        &w.groundtruth,
        &cats,
        &grid,
        &Thresholds::default(),
        ApMode::AllPoint,
        0
    )
    .is_err());
}

fn grid_scene(seed: u64) -> (Vec<GroundTruthRecord>, DetectorDump) {
    // detections on a coarse grid never overlap each other
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for img in 0..20 {
        let image = format!("img{img:02}");
        for k in 0..6u64 {
            let x = (k * 100) as f64;
            let b = BBox::new(x, 0.0, x + 50.0, 50.0).unwrap();
            let h = (seed * 31 + img * 7 + k * 13) % 17;
            if h % 3 != 0 {
                gts.push(GroundTruthRecord::new(&image, "a", b));
            }
            dets.push(
                DetectionRecord::new(
                    &image,
                    "a",
                    b,
                    h as f64 / 17.0 + if h % 3 != 0 { 0.3 } else { 0.0 },
                )
                .unwrap(),
            );
        }
    }
    (gts, DetectorDump::from_records("solo", dets))
}

#[test]
fn platt_on_one_detector_keeps_its_ap() {
    let (val_gt, val) = grid_scene(1);
    let (test_gt, test) = grid_scene(2);
    let res = run_experiment(
        (&val_gt, std::slice::from_ref(&val)),
        (&test_gt, std::slice::from_ref(&test)),
        &ExperimentOptions {
            methods: vec![Method::Platt],
            n: ExponentChoice::Fixed(Exponent::Finite(2.0)),
            ..Default::default()
        },
    )
    .unwrap();
    assert!(
        (res.fused("platt") - res.individual["solo"]).abs() < 1e-12,
        "{res:?}"
    );
}

#[test]
fn empty_dump_scores_zero() {
    let (gt, _) = grid_scene(3);
    let cats = BTreeSet::from(["a".to_string()]);
    let empty = DetectorDump::new("none");
    let s = evaluate(empty.records(), &gt, &cats, 0.5, ApMode::AllPoint).unwrap();
    assert_eq!(s.map, 0.0);
}

#[test]
fn perfect_detector_model_is_certain() {
    let w = world(vec![profile("p", 1.0, 0.0, 0.0, 2.0)], 2);
    let (labeled, n_tobj) = label_category(w.dumps[0].records(), &w.groundtruth, "a", 0.5).unwrap();
    let m = ConfidenceModel::build("p", "a", &labeled, n_tobj, Exponent::Finite(2.0)).unwrap();
    for e in m.table() {
        assert_eq!(e.mass.target(), 1.0, "{e:?}");
    }
}
