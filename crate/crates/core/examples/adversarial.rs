//! The stream that makes any single-pass stratified sampler pay a factor
//! that grows with the number of strata: every stratum looks alike until the
//! last element lands in one of them and changes its spread.
//!
//! `cargo run --release --example adversarial -- [seeds]`

use voila::datagen::adversarial_stream;
use voila::estimator::{sample_variance, variance_of_estimate};
use voila::offline::voila_allocate;
use voila::stream::svoila_stream;

fn main() -> voila::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let alpha = 64;
    println!("{:>4} {:>12} {:>12} {:>8}", "r", "offline", "streaming", "ratio");
    for r in [2u32, 4, 8, 16, 32] {
        let src = adversarial_stream(r, alpha)?;
        let stats = src.to_dataset().summaries();
        let opt = variance_of_estimate(&stats, &voila_allocate(&stats, alpha as u64)?)?.total_variance;
        let mut sum = 0.0;
        for seed in 0..seeds {
            let sample = svoila_stream(alpha as usize, src.records(), 1, seed)?;
            sum += sample_variance(&sample).map_or(f64::INFINITY, |v| v.total_variance);
        }
        let streamed = sum / seeds as f64;
        println!("{r:>4} {opt:>12.4e} {streamed:>12.4e} {:>8.2}", streamed / opt);
    }
    Ok(())
}
