//! S-VOILA against stratified sampling with uniform allocation and plain
//! reservoir sampling, all holding the same number of records.
//!
//! `cargo run --release --example baselines -- [seeds]`

use voila::datagen::{synthetic_stream, SyntheticConfig};
use voila::estimator::{estimate_mean, exact_mean, relative_error, sample_variance};
use voila::stream::{reservoir_stream, ssunif_stream, svoila_stream};

fn main() -> voila::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let cfg = SyntheticConfig {
        total_records: 20_000,
        ..Default::default()
    };
    let budget = 500;
    let names = ["svoila b=100", "ssunif b=100", "reservoir"];
    let mut var = [0.0; 3];
    let mut err = [0.0; 3];
    let mut undefined = [0; 3];
    for seed in 0..seeds {
        let src = synthetic_stream(&cfg, seed)?;
        let exact = exact_mean(&src.to_dataset(), None)?;
        let samples = [
            svoila_stream(budget, src.records(), 100, seed)?,
            ssunif_stream(budget, src.records(), 100, seed)?,
            reservoir_stream(budget, src.records(), seed)?,
        ];
        for (k, s) in samples.iter().enumerate() {
            match (sample_variance(s), estimate_mean(s, None)) {
                (Ok(v), Ok(e)) => {
                    var[k] += v.total_variance;
                    err[k] += relative_error(e, exact)?;
                }
                _ => undefined[k] += 1,
            }
        }
    }
    for k in 0..3 {
        let n = (seeds - undefined[k]).max(1) as f64;
        println!(
            "{:<13} variance {:.3e}  mean rel.err {:.3e}  undefined {}",
            names[k],
            var[k] / n,
            err[k] / n,
            undefined[k]
        );
    }
    Ok(())
}
