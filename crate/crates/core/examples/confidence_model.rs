//! Builds confidence models from a validation sweep and shows how the
//! exponent shapes the assigned masses.

use dbf::confidence::{theoretical_precision, ConfidenceModel};
use dbf::evaluation::label_category;
use dbf::synth::{benchmark_config, generate_world};
use dbf::{Exponent, Observation};

fn main() -> dbf::Result<()> {
    let world = generate_world(&benchmark_config(3, 1))?;
    let dump = &world.dumps[1];
    let (labeled, n_tobj) = label_category(dump.records(), &world.groundtruth, "person", 0.5)?;

    println!("theoretical precision 1 - r^n at r = 0.6:");
    for n in Exponent::default_grid() {
        println!("  n = {n:>3}: {:.4}", theoretical_precision(0.6, n)?);
    }

    for n in [
        Exponent::Finite(1.0),
        Exponent::Finite(4.0),
        Exponent::Infinite,
    ] {
        let model = ConfidenceModel::build(dump.detector_id(), "person", &labeled, n_tobj, n)?;
        println!(
            "\n{} / person, n = {n}, {} table entries",
            model.detector_id,
            model.table().len()
        );
        for score in [-1.0, 0.0, 1.0, 2.0, 3.0] {
            let m = model.assign(Observation::Score(score));
            println!(
                "  score {score:5.1}: mT {:.3}  mNotT {:.3}  mI {:.3}  fused {:+.3}",
                m.target(),
                m.non_target(),
                m.uncertain(),
                m.fused_score()
            );
        }
        println!(
            "  absent    : {:?}",
            model.assign(Observation::Absent).to_array()
        );
    }

    let model = ConfidenceModel::build(
        dump.detector_id(),
        "person",
        &labeled,
        n_tobj,
        Exponent::Finite(2.0),
    )?;
    println!("\nmodel JSON starts with:");
    let json = serde_json::to_string_pretty(&model).expect("serializable");
    for line in json.lines().take(12) {
        println!("  {line}");
    }
    Ok(())
}
