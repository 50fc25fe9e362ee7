//! Shrinking an existing stratified sample to a smaller size while keeping the
//! variance as low as possible.
//!
//! `cargo run --example reduction`

use voila::reduction::{
    brute_force_reduction, fast_ssr, instance_objective, integerize_reduction, single_ssr, ssr, ReductionInstance,
    ReductionRow,
};

fn main() -> voila::Result<()> {
    // Weight is count times standard deviation; size is what the sample holds.
    let rows = vec![
        ReductionRow::new(1u32, 40.0, 6.0),
        ReductionRow::new(2u32, 3.0, 5.0),
        ReductionRow::new(3u32, 3.0, 2.0),
        ReductionRow::new(4u32, 0.0, 3.0),
    ];
    let inst = ReductionInstance::new(rows, 16.0)?;
    println!("evict one element from stratum {}", single_ssr(&inst)?);

    let inst = ReductionInstance::new(inst.rows.clone(), 7.0)?;
    let slow = ssr(&inst)?;
    let fast = fast_ssr(&inst)?;
    println!("target 7, real sizes: {:?}", fast.sizes());
    assert_eq!(slow.sizes(), fast.sizes());

    let rounded = integerize_reduction(&inst, &fast);
    let best = brute_force_reduction(&inst)?;
    println!(
        "rounded {:?}, objective {:.2}",
        rounded.sizes(),
        instance_objective(&inst, &rounded)
    );
    println!(
        "optimum {:?}, objective {:.2}",
        best.sizes(),
        instance_objective(&inst, &best)
    );
    Ok(())
}
