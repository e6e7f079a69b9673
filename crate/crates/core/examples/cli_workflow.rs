//! The file-based workflow behind the `dbf` binary: synthesize, build
//! models on a validation split, fuse a test split, print the report.

use std::path::Path;

use dbf::pipeline::{
    cmd_build_model, cmd_fuse, BuildOptions, DetectorSource, ExponentChoice, FuseOptions, Method,
    RunConfig,
};
use dbf::synth::{benchmark_config, generate_world};

fn sources(dir: &Path, ids: &[&str]) -> Vec<DetectorSource> {
    ids.iter()
        .map(|id| DetectorSource {
            id: id.to_string(),
            path: dir.join(format!("{id}.jsonl")),
        })
        .collect()
}

fn main() -> dbf::Result<()> {
    let root = std::env::temp_dir().join("dbf-cli-workflow");
    let ids = ["strong", "medium", "weak"];
    generate_world(&benchmark_config(3, 0))?.write(root.join("val"))?;
    generate_world(&benchmark_config(3, 1000))?.write(root.join("test"))?;

    let mut build = RunConfig::new(root.join("val/gt.jsonl"), sources(&root.join("val"), &ids));
    build.out = Some(root.join("models"));
    let report = cmd_build_model(
        &build,
        &BuildOptions {
            n: ExponentChoice::Auto,
            ..Default::default()
        },
    )?;
    print!("{}", report.to_text());

    let mut fuse = RunConfig::new(
        root.join("test/gt.jsonl"),
        sources(&root.join("test"), &ids),
    );
    fuse.out = Some(root.join("fused"));
    let report = cmd_fuse(
        &fuse,
        &FuseOptions {
            methods: vec![
                Method::Dbf,
                Method::Platt,
                Method::Ws,
                Method::Bayes,
                Method::Dst,
            ],
            ..FuseOptions::new(root.join("models"))
        },
    )?;
    println!();
    print!("{}", report.to_text());
    println!("\noutputs under {}", root.display());
    Ok(())
}
