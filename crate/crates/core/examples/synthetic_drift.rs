//! Twenty Gaussian strata; stratum 12 jumps from sigma 1 to sigma 20 after
//! 10,000 records. Compares S-VOILA at several batch sizes with the offline
//! optimum on the same prefix.
//!
//! `cargo run --release --example synthetic_drift -- [seeds]`

use voila::allocation::cosine_distance;
use voila::datagen::{synthetic_stream, SyntheticConfig};
use voila::estimator::{sample_variance, variance_of_estimate};
use voila::offline::voila_allocate;
use voila::stream::{run_batches, SVoila, StreamSampler};
use voila::{Dataset, StratumId};

fn main() -> voila::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let cfg = SyntheticConfig::default();
    let budget = 1000;
    let checkpoints = [5_000usize, 10_000, 12_000, 20_000, 30_000, 40_000, 50_000];
    let batches = [1usize, 10, 100];

    println!(
        "{:>8} {:>12} {:>12} {:>12} {:>12} {:>10} {:>10}",
        "seen", "voila", "b=1", "b=10", "b=100", "cos(100)", "s12(100)"
    );
    let mut sums = vec![[0.0f64; 6]; checkpoints.len()];
    for seed in 0..seeds {
        let src = synthetic_stream(&cfg, seed)?;
        let mut samplers: Vec<SVoila> = batches
            .iter()
            .map(|_| SVoila::new(budget, seed))
            .collect::<Result<_, _>>()?;
        let mut start = 0;
        for (c, &end) in checkpoints.iter().enumerate() {
            let chunk = &src.records()[start..end];
            for (s, &b) in samplers.iter_mut().zip(&batches) {
                run_batches(s, chunk, b)?;
            }
            start = end;
            let prefix = Dataset::new(src.records()[..end].to_vec());
            let stats = prefix.summaries();
            let opt = voila_allocate(&stats, budget as u64)?;
            sums[c][0] += variance_of_estimate(&stats, &opt)?.total_variance;
            for (k, s) in samplers.iter().enumerate() {
                sums[c][k + 1] += sample_variance(s.sample())?.total_variance;
            }
            let last = samplers[2].snapshot().allocation;
            sums[c][4] += cosine_distance(&last, &opt)?;
            sums[c][5] += last.get(&StratumId::Index(12)).unwrap_or(0.0);
        }
    }
    for (c, &end) in checkpoints.iter().enumerate() {
        let m: Vec<f64> = sums[c].iter().map(|x| x / seeds as f64).collect();
        println!(
            "{end:>8} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>10.4} {:>10.1}",
            m[0], m[1], m[2], m[3], m[4], m[5]
        );
    }
    Ok(())
}
