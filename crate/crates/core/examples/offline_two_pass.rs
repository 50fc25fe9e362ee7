//! Two passes over a CSV file: the first gathers per-stratum counts and
//! spreads, the second draws the VOILA sample and answers a mean query.
//!
//! `cargo run --example offline_two_pass -- [data.csv] [budget]`
//!
//! Without a file, a synthetic stream is written to the temp directory first.

use std::path::PathBuf;

use voila::allocation::Policy;
use voila::datagen::{replay_csv, synthetic_stream, write_csv, BatchPlan, CsvSchema, SyntheticConfig};
use voila::estimator::{estimate_mean, exact_mean, relative_error, sample_variance};
use voila::offline::{allocate_integer, materialize};

fn main() -> voila::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = match args.next() {
        Some(p) => PathBuf::from(p),
        None => {
            let p = std::env::temp_dir().join("voila_offline_two_pass.csv");
            write_csv(&p, synthetic_stream(&SyntheticConfig::default(), 1)?.records())?;
            p
        }
    };
    let budget: u64 = args.next().and_then(|b| b.parse().ok()).unwrap_or(1000);

    let data = replay_csv(&path, &CsvSchema::default(), &BatchPlan::Fixed(1))?.to_dataset();
    let stats = data.summaries();
    println!(
        "{} records in {} strata from {}",
        data.len(),
        stats.len(),
        path.display()
    );

    let exact = exact_mean(&data, None)?;
    for policy in [Policy::Voila, Policy::NeymanPlus, Policy::Proportional] {
        let alloc = allocate_integer(&stats, policy, budget)?;
        let sample = materialize(&data, &alloc, 7)?;
        let est = estimate_mean(&sample, None)?;
        let var = sample_variance(&sample)?.total_variance;
        println!(
            "{:<13} estimate {est:>10.5}  exact {exact:>10.5}  rel.err {:.2e}  variance {var:.3e}",
            policy.to_string(),
            relative_error(est, exact)?
        );
    }
    Ok(())
}
