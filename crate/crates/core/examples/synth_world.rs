//! Generates a small synthetic world and writes it as JSON lines.

use dbf::synth::{generate_world, ObjectCount, SynthDetectorProfile, SynthWorldConfig};

fn main() -> dbf::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("dbf-synth-example"));
    let cfg = SynthWorldConfig {
        n_images: 20,
        objects_per_image: ObjectCount::Poisson { mean: 2.0 },
        image_width: 320.0,
        image_height: 240.0,
        min_box_size: 16.0,
        max_box_size: 64.0,
        categories: vec!["cat".into(), "dog".into()],
        detectors: vec![SynthDetectorProfile {
            id: "toy".into(),
            recall_rate: 0.8,
            loc_sigma: 2.0,
            fp_per_image: 1.5,
            tp_score_mean: 1.0,
            fp_score_mean: -1.0,
            score_sigma: 0.7,
        }],
        seed: 42,
    };
    let world = generate_world(&cfg)?;
    world.write(&out)?;
    println!(
        "{} objects, {} detections written to {}",
        world.groundtruth.len(),
        world.dumps[0].len(),
        out.display()
    );
    println!(
        "config:\n{}",
        serde_json::to_string_pretty(&cfg).expect("serializable")
    );
    Ok(())
}
