//! Dempster combination of detector evidence over {T, ¬T, I}.

use dbf::fusion::{combine_all, combine_two};
use dbf::MassFunction;

fn main() -> dbf::Result<()> {
    let a = MassFunction::new(0.6, 0.1, 0.3)?;
    let b = MassFunction::new(0.5, 0.2, 0.3)?;
    let ab = combine_two(&a, &b)?;
    println!("a       = {:?}", a.to_array());
    println!("b       = {:?}", b.to_array());
    println!(
        "a (+) b = {:?}  fused score {:.4}",
        ab.to_array(),
        ab.fused_score()
    );

    // The vacuous mass is what an absent detector contributes.
    let with_absent = combine_all(&[a, MassFunction::vacuous(), b])?;
    println!("with an absent detector: {:?}", with_absent.to_array());

    // Strong disagreement leaves little mass after normalization.
    let yes = MassFunction::new(0.9, 0.05, 0.05)?;
    let no = MassFunction::new(0.05, 0.9, 0.05)?;
    let clash = combine_two(&yes, &no)?;
    println!("conflicting evidence: {:?}", clash.to_array());

    match combine_two(
        &MassFunction::new(1.0, 0.0, 0.0)?,
        &MassFunction::new(0.0, 1.0, 0.0)?,
    ) {
        Ok(m) => println!("unexpected: {:?}", m.to_array()),
        Err(e) => println!("total conflict is an error: {e}"),
    }
    Ok(())
}
