//! One high-variance stratum of 100 records next to nine quiet strata of 1000.
//! Neyman asks for more records than the small stratum has; VOILA does not.
//!
//! `cargo run --example neyman_vs_voila`

use voila::allocation::{neyman, AllocationInput, Policy};
use voila::estimator::variance_of_estimate;
use voila::offline::allocate_integer;
use voila::StratumSummary;

fn main() -> voila::Result<()> {
    let mut strata = vec![StratumSummary::new(1u32, 100, 100.0)];
    strata.extend((2..=10u32).map(|i| StratumSummary::new(i, 1000, 0.1)));
    let budget = 1000;

    let raw = neyman(&AllocationInput::new(strata.clone(), budget)?)?;
    println!(
        "neyman (raw): stratum 1 gets {:.1} of {} records",
        raw.shares()[0].size,
        strata[0].count
    );

    println!(
        "{:<12} {:>10} {:>10} {:>12}",
        "policy", "stratum 1", "others", "variance"
    );
    for policy in [
        Policy::Neyman,
        Policy::NeymanPlus,
        Policy::Proportional,
        Policy::Uniform,
        Policy::Voila,
    ] {
        let alloc = allocate_integer(&strata, policy, budget)?;
        let sizes = alloc.sizes();
        let v = variance_of_estimate(&strata, &alloc).map(|r| r.total_variance);
        let v = v.map_or("undefined".to_string(), |v| format!("{v:.3e}"));
        println!("{:<12} {:>10} {:>10} {:>12}", policy.to_string(), sizes[0], sizes[1], v);
    }
    Ok(())
}
