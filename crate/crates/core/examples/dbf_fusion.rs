//! Trains confidence models on one synthetic world and fuses the detectors
//! of another.

use std::collections::BTreeSet;

use dbf::evaluation::{evaluate, ApMode};
use dbf::fusion::{dbf_fuse, flatten};
use dbf::pipeline::{models_from_sweeps, validation_sweeps};
use dbf::synth::{benchmark_config, generate_world};
use dbf::{Exponent, FusionParams};

fn main() -> dbf::Result<()> {
    let val = generate_world(&benchmark_config(3, 11))?;
    let test = generate_world(&benchmark_config(3, 1011))?;
    let categories: BTreeSet<String> = ["car", "person"].map(String::from).into();

    let sweeps = validation_sweeps(&val.dumps, &val.groundtruth, &categories, 0.5)?;
    let models = models_from_sweeps(&sweeps, |_| Exponent::Finite(4.0))?;
    let fused = dbf_fuse(&test.dumps, &models, &categories, &FusionParams::default())?;
    let records = flatten(&fused);

    for dump in &test.dumps {
        let s = evaluate(
            dump.records(),
            &test.groundtruth,
            &categories,
            0.5,
            ApMode::AllPoint,
        )?;
        println!("{:<8} mAP {:.4}", dump.detector_id(), s.map);
    }
    let s = evaluate(
        records.iter(),
        &test.groundtruth,
        &categories,
        0.5,
        ApMode::AllPoint,
    )?;
    println!(
        "{:<8} mAP {:.4}  ({} fused detections)",
        "DBF",
        s.map,
        records.len()
    );

    let (scope, dets) = fused.iter().next().expect("non-empty");
    println!("\nfirst scope {}/{}:", scope.image_id, scope.category);
    for d in dets.iter().take(5) {
        let m = d.mass.expect("DBF keeps the combined mass");
        println!(
            "  score {:+.4}  box {:?}  mass {:?}",
            d.score,
            d.bbox.to_array(),
            m.to_array()
        );
    }
    Ok(())
}
