//! VOC-style evaluation of synthetic detector dumps.

use std::collections::BTreeSet;

use dbf::evaluation::{compute_pr_curve, evaluate, label_category, ApMode};
use dbf::synth::{benchmark_config, generate_world};

fn main() -> dbf::Result<()> {
    let world = generate_world(&benchmark_config(3, 7))?;
    let categories: BTreeSet<String> = ["car", "person"].map(String::from).into();

    for mode in [ApMode::AllPoint, ApMode::ElevenPoint] {
        println!("AP mode {mode}");
        for dump in &world.dumps {
            let summary = evaluate(dump.records(), &world.groundtruth, &categories, 0.5, mode)?;
            let per_cat: Vec<String> = summary
                .per_category
                .iter()
                .map(|(c, e)| format!("{c}={:.4} ({} tp / {} fp)", e.ap, e.n_tp, e.n_fp))
                .collect();
            println!(
                "  {:<8} mAP {:.4}  {}",
                dump.detector_id(),
                summary.map,
                per_cat.join("  ")
            );
        }
    }

    let (labeled, n_tobj) =
        label_category(world.dumps[0].records(), &world.groundtruth, "car", 0.5)?;
    let curve = compute_pr_curve(&labeled, n_tobj)?;
    println!("\nstrong/car sweep, every 200th point:");
    for p in curve.points.iter().step_by(200) {
        println!(
            "  score {:7.3}  precision {:.3}  recall {:.3}",
            p.score, p.precision, p.recall
        );
    }
    Ok(())
}
