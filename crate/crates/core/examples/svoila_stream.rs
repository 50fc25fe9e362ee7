//! Feeding a stream to S-VOILA in minibatches and watching the allocation
//! follow the data.
//!
//! `cargo run --release --example svoila_stream -- [batch]`

use voila::datagen::{synthetic_stream, SyntheticConfig};
use voila::stream::{SVoila, StreamSampler};
use voila::StratumId;

fn main() -> voila::Result<()> {
    let batch: usize = std::env::args().nth(1).and_then(|b| b.parse().ok()).unwrap_or(100);
    let cfg = SyntheticConfig {
        num_strata: 5,
        changed_stratum: 3,
        change_at: 2_000,
        total_records: 20_000,
        ..Default::default()
    };
    let src = synthetic_stream(&cfg, 3)?;
    let mut sampler = SVoila::new(500, 3)?;

    println!(
        "{:>7} {}",
        "seen",
        (1..=5).map(|i| format!("{:>7}", format!("s{i}"))).collect::<String>()
    );
    for (k, chunk) in src.records().chunks(batch).enumerate() {
        sampler.feed(chunk)?;
        if (k + 1) * batch % 2_000 < batch {
            let snap = sampler.snapshot();
            let row: String = (1..=5u32)
                .map(|i| format!("{:>7}", snap.allocation.get(&StratumId::Index(i)).unwrap_or(0.0)))
                .collect();
            println!("{:>7}{row}", snap.elements_seen);
        }
    }
    let snap = sampler.snapshot();
    println!(
        "variance of the final sample: {:.3e}",
        snap.variance.unwrap_or(f64::NAN)
    );
    Ok(())
}
