use std::collections::BTreeSet;

use dbf::evaluation::{evaluate, ApMode};
use dbf::synth::{generate_world, ObjectCount, SynthDetectorProfile, SynthWorldConfig};

fn profile(recall: f64, loc: f64, fp: f64) -> SynthDetectorProfile {
    SynthDetectorProfile {
        id: "d".into(),
        recall_rate: recall,
        loc_sigma: loc,
        fp_per_image: fp,
        tp_score_mean: 2.0,
        fp_score_mean: 0.0,
        score_sigma: 1.0,
    }
}

fn config(p: SynthDetectorProfile, seed: u64) -> SynthWorldConfig {
    SynthWorldConfig {
        n_images: 200,
        objects_per_image: ObjectCount::Poisson { mean: 2.0 },
        image_width: 640.0,
        image_height: 480.0,
        min_box_size: 32.0,
        max_box_size: 128.0,
        categories: vec!["a".into(), "b".into()],
        detectors: vec![p],
        seed,
    }
}

fn map(cfg: &SynthWorldConfig) -> f64 {
    let w = generate_world(cfg).unwrap();
    let cats: BTreeSet<String> = cfg.categories.iter().cloned().collect();
    evaluate(
        w.dumps[0].records(),
        &w.groundtruth,
        &cats,
        0.5,
        ApMode::AllPoint,
    )
    .unwrap()
    .map
}

#[test]
fn perfect_and_blind_detectors() {
    assert_eq!(map(&config(profile(1.0, 0.0, 0.0), 1)), 1.0);
    assert_eq!(map(&config(profile(0.0, 0.0, 3.0), 1)), 0.0);
}

#[test]
fn empirical_rates_track_the_profile() {
    let w = generate_world(&config(profile(0.7, 0.0, 1.5), 4)).unwrap();
    let n_img = 200.0;
    let n_obj = w.groundtruth.len() as f64;
    assert!(
        (n_obj / n_img - 2.0).abs() < 0.3,
        "objects per image {}",
        n_obj / n_img
    );
    let tp = w.dumps[0]
        .records()
        .filter(|d| w.groundtruth.iter().any(|g| g.bbox == d.bbox))
        .count() as f64;
    let fp = w.dumps[0].len() as f64 - tp;
    assert!((tp / n_obj - 0.7).abs() < 0.06, "recall {}", tp / n_obj);
    assert!((fp / n_img - 1.5).abs() < 0.25, "fp rate {}", fp / n_img);
}

#[test]
fn boxes_stay_inside_the_image() {
    let w = generate_world(&config(profile(0.9, 30.0, 2.0), 2)).unwrap();
    for d in w.dumps[0].records() {
        let [x1, y1, x2, y2] = d.bbox.to_array();
        assert!(x1 >= 0.0 && y1 >= 0.0 && x2 <= 640.0 && y2 <= 480.0);
    }
}

#[test]
fn same_seed_writes_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(profile(0.8, 3.0, 1.0), 11);
    generate_world(&cfg)
        .unwrap()
        .write(dir.path().join("a"))
        .unwrap();
    generate_world(&cfg)
        .unwrap()
        .write(dir.path().join("b"))
        .unwrap();
    for f in ["gt.jsonl", "d.jsonl"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn noisier_detectors_score_lower() {
    let clean = map(&config(profile(0.9, 1.0, 1.0), 6));
    let noisy = map(&config(profile(0.9, 15.0, 1.0), 6));
    assert!(clean > noisy, "{clean} vs {noisy}");
}
