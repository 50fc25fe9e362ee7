//! Running an experiment described in TOML and printing the averaged metrics.
//!
//! `cargo run --release --example experiment_run -- [config.toml]`
//!
//! The same config works with `voila run --config examples/configs/drift.toml`.

use std::collections::BTreeMap;

use voila::experiment::{run_experiment, ExperimentConfig};

fn main() -> voila::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/drift.toml").to_string());
    let text = std::fs::read_to_string(&path).map_err(|e| voila::Error::io(&path, e))?;
    let cfg = ExperimentConfig::from_toml(&text)?;

    let mut table: BTreeMap<u64, Vec<String>> = BTreeMap::new();
    for m in run_experiment(&cfg)? {
        let v = m.variance.map_or("-".to_string(), |v| format!("{v:.3e}"));
        table
            .entry(m.elements_seen)
            .or_default()
            .push(format!("{}={v}", m.method));
    }
    for (seen, row) in table {
        println!("{seen:>7}  {}", row.join("  "));
    }
    Ok(())
}
