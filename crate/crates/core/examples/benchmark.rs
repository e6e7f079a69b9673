//! Runs the synthetic benchmark over several seeds and prints the mAP of
//! every detector and fuser.
//!
//! cargo run --release --example benchmark -- [n_seeds] [n_detectors]

use std::time::Instant;

use dbf::pipeline::{dst_key, run_experiment, ExperimentOptions, Method};
use dbf::synth::{benchmark_config, generate_world};

fn main() -> dbf::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let n_seeds = args.first().copied().unwrap_or(5);
    let n_det = args.get(1).copied().unwrap_or(3);
    let recalls = vec![0.4, 0.5, 0.6, 0.7, 0.8];
    let opts = ExperimentOptions {
        methods: vec![
            Method::Dbf,
            Method::Platt,
            Method::Ws,
            Method::Bayes,
            Method::Dst,
        ],
        operating_recalls: recalls.clone(),
        ..Default::default()
    };
    let start = Instant::now();
    for seed in 0..n_seeds as u64 {
        let val = generate_world(&benchmark_config(n_det, seed))?;
        let test = generate_world(&benchmark_config(n_det, seed + 1000))?;
        let res = run_experiment(
            (&val.groundtruth, &val.dumps),
            (&test.groundtruth, &test.dumps),
            &ExperimentOptions {
                seed,
                ..opts.clone()
            },
        )?;
        let ind: Vec<String> = res
            .individual
            .iter()
            .map(|(k, v)| format!("{k}={v:.4}"))
            .collect();
        let dst: Vec<String> = recalls
            .iter()
            .map(|&r| format!("{:.4}", res.fused(&dst_key(r))))
            .collect();
        println!(
            "seed {seed:2}  {}  dbf={:.4} platt={:.4} ws={:.4} bayes={:.4}  dst=[{}]",
            ind.join(" "),
            res.fused("dbf"),
            res.fused("platt"),
            res.fused("ws"),
            res.fused("bayes"),
            dst.join(" "),
        );
    }
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
