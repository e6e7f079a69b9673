//! Dynamic belief assignment against a single static operating point.

use dbf::pipeline::{dst_key, run_experiment, ExperimentOptions, Method};
use dbf::synth::{benchmark_config, generate_world};

fn main() -> dbf::Result<()> {
    let recalls = vec![0.4, 0.5, 0.6, 0.7, 0.8];
    let val = generate_world(&benchmark_config(3, 5))?;
    let test = generate_world(&benchmark_config(3, 1005))?;
    let res = run_experiment(
        (&val.groundtruth, &val.dumps),
        (&test.groundtruth, &test.dumps),
        &ExperimentOptions {
            methods: vec![Method::Dbf, Method::Dst],
            operating_recalls: recalls.clone(),
            ..Default::default()
        },
    )?;
    println!("dynamic        mAP {:.4}", res.fused("dbf"));
    for r in recalls {
        println!("static @ r={r:.1} mAP {:.4}", res.fused(&dst_key(r)));
    }
    Ok(())
}
