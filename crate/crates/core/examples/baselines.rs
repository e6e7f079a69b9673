//! Platt, weighted-sum and naive Bayes fusion next to DBF.

use dbf::pipeline::{run_experiment, ExperimentOptions, Method};
use dbf::synth::{benchmark_config, generate_world};

fn main() -> dbf::Result<()> {
    let val = generate_world(&benchmark_config(3, 21))?;
    let test = generate_world(&benchmark_config(3, 1021))?;
    let opts = ExperimentOptions {
        methods: vec![Method::Dbf, Method::Platt, Method::Ws, Method::Bayes],
        ..Default::default()
    };
    let res = run_experiment(
        (&val.groundtruth, &val.dumps),
        (&test.groundtruth, &test.dumps),
        &opts,
    )?;
    for (id, map) in &res.individual {
        println!("{id:<8} {map:.4}");
    }
    for (method, map) in &res.fused {
        println!(
            "[{method}]{:<width$} {map:.4}",
            "",
            width = 6usize.saturating_sub(method.len())
        );
    }
    Ok(())
}
