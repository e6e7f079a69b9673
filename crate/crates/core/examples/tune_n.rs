//! Picks the exponent per category by two-fold cross-validation.

use std::collections::BTreeSet;

use dbf::evaluation::ApMode;
use dbf::pipeline::{tune_n, Thresholds};
use dbf::synth::{benchmark_config, generate_world};
use dbf::Exponent;

fn main() -> dbf::Result<()> {
    let val = generate_world(&benchmark_config(3, 3))?;
    let categories: BTreeSet<String> = ["car", "person"].map(String::from).into();
    let report = tune_n(
        &val.dumps,
        &val.groundtruth,
        &categories,
        &Exponent::default_grid(),
        &Thresholds::default(),
        ApMode::AllPoint,
        0,
    )?;
    for (cat, t) in &report.per_category {
        let scores: Vec<String> = t
            .scores
            .iter()
            .map(|s| format!("{}:{:.4}", s.n, s.ap))
            .collect();
        println!(
            "{cat:<7} selected n = {:<3} [{}]",
            t.selected,
            scores.join(" ")
        );
    }
    Ok(())
}
