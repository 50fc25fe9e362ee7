//! Replaying a CSV log where each hour's rows arrive together. Strata are
//! built from two columns and a minibatch is every row sharing a timestamp
//! prefix.
//!
//! `cargo run --example csv_replay`

use std::fs;

use voila::datagen::{replay_csv, BatchPlan, CsvSchema};
use voila::stream::{SVoila, StreamSampler};

fn main() -> voila::Result<()> {
    let path = std::env::temp_dir().join("voila_csv_replay.csv");
    let mut text = String::from("city,pollutant,value,time\n");
    for h in 0..72u32 {
        for (c, city) in ["Delhi", "Lima", "Oslo"].iter().enumerate() {
            for (p, pollutant) in ["pm25", "no2"].iter().enumerate() {
                let burst = if c == 0 && h > 48 { 25.0 } else { 1.0 };
                let value = 10.0 * (c + 1) as f64 + burst * (((h * 7 + p as u32 * 3) % 11) as f64 - 5.0);
                text.push_str(&format!(
                    "{city},{pollutant},{value},2024-03-{:02}T{:02}:{:02}\n",
                    1 + h / 24,
                    h % 24,
                    15 * p
                ));
            }
        }
    }
    fs::write(&path, text).map_err(|e| voila::Error::io(&path, e))?;

    let schema = CsvSchema {
        stratum_columns: vec!["city".into(), "pollutant".into()],
        ..CsvSchema::default()
    };
    // "2024-03-01T05" identifies the hour.
    let plan = BatchPlan::Column {
        column: "time".into(),
        prefix: Some(13),
    };
    let src = replay_csv(&path, &schema, &plan)?;
    let batches = src.batches(1);
    println!("{} rows in {} hourly batches", src.len(), batches.len());

    let mut sampler = SVoila::new(60, 0)?;
    for b in batches {
        sampler.feed(b)?;
    }
    for share in sampler.snapshot().allocation.shares() {
        println!("{:<12} {:>4}", share.stratum.to_string(), share.size);
    }
    Ok(())
}
