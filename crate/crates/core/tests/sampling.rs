//! Monte Carlo checks of the samplers against closed-form inclusion rates and
//! variances.

use std::collections::HashMap;

use voila::allocation::Policy;
use voila::estimator::{estimate_mean, exact_mean, variance_of_estimate};
use voila::model::WeightedRecord;
use voila::offline::{allocate_integer, materialize};
use voila::stream::{run_batches, Reservoir, SVoila, SsUnif, StreamSampler};
use voila::{Dataset, Record};

fn population() -> Dataset {
    let mut records = Vec::new();
    for k in 0..60 {
        records.push(Record::new(1u32, (k % 7) as f64));
    }
    for k in 0..30 {
        records.push(Record::new(2u32, 100.0 + (k * k % 31) as f64 * 5.0));
    }
    for k in 0..10 {
        records.push(Record::new(3u32, -50.0 + 10.0 * k as f64));
    }
    Dataset::new(records)
}

fn counts<'a>(samples: impl Iterator<Item = &'a [WeightedRecord]>) -> HashMap<u64, u64> {
    let mut hits = HashMap::new();
    for sample in samples {
        for r in sample {
            *hits.entry(r.value.to_bits()).or_default() += 1;
        }
    }
    hits
}

#[test]
fn offline_inclusion_matches_allocation() {
    // Distinct values so an element is identified by its value.
    let data: Dataset = (0..40).map(|k| Record::new((k % 4) as u32, k as f64)).collect();
    let alloc = allocate_integer(&data.summaries(), Policy::Proportional, 12).unwrap();
    let trials = 20_000u64;
    let samples: Vec<Vec<WeightedRecord>> = (0..trials)
        .map(|s| materialize(&data, &alloc, s).unwrap().records())
        .collect();
    let hits = counts(samples.iter().map(|s| s.as_slice()));
    let p = 3.0 / 10.0;
    let sd = (p * (1.0 - p) / trials as f64).sqrt();
    for k in 0..40 {
        let rate = hits[&(k as f64).to_bits()] as f64 / trials as f64;
        assert!((rate - p).abs() < 4.5 * sd, "element {k}: {rate}");
    }
}

#[test]
fn reservoir_inclusion_is_uniform() {
    let stream: Vec<Record> = (0..50).map(|k| Record::new((k % 3) as u32, k as f64)).collect();
    let trials = 20_000u64;
    let samples: Vec<Vec<WeightedRecord>> = (0..trials)
        .map(|s| {
            let mut r = Reservoir::new(10, s).unwrap();
            r.feed(&stream).unwrap();
            r.sample().records()
        })
        .collect();
    let hits = counts(samples.iter().map(|s| s.as_slice()));
    let p = 0.2;
    let sd = (p * (1.0 - p) / trials as f64).sqrt();
    for k in 0..50 {
        let rate = hits[&(k as f64).to_bits()] as f64 / trials as f64;
        assert!((rate - p).abs() < 4.5 * sd, "element {k}: {rate}");
    }
}

#[test]
fn offline_estimate_variance_matches_formula() {
    let data = population();
    let stats = data.summaries();
    for policy in [Policy::Voila, Policy::NeymanPlus, Policy::Proportional] {
        let alloc = allocate_integer(&stats, policy, 20).unwrap();
        let predicted = variance_of_estimate(&stats, &alloc).unwrap().total_variance;
        let exact = exact_mean(&data, None).unwrap();
        let trials = 20_000u64;
        let est: Vec<f64> = (0..trials)
            .map(|s| estimate_mean(&materialize(&data, &alloc, s).unwrap(), None).unwrap())
            .collect();
        let mean = est.iter().sum::<f64>() / trials as f64;
        let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        assert!(
            (mean - exact).abs() < 4.0 * (var / trials as f64).sqrt(),
            "{policy}: {mean} vs {exact}"
        );
        // The variance of a sample variance over 20k draws is a few percent.
        assert!((var / predicted - 1.0).abs() < 0.06, "{policy}: {var} vs {predicted}");
    }
}

fn stream_estimates(make: impl Fn(u64) -> Box<dyn StreamSampler>, stream: &[Record], batch: usize) -> (f64, f64) {
    let trials = 4_000u64;
    let est: Vec<f64> = (0..trials)
        .map(|s| {
            let mut sampler = make(s);
            run_batches(sampler.as_mut(), stream, batch).unwrap();
            estimate_mean(sampler.sample(), None).unwrap()
        })
        .collect();
    let mean = est.iter().sum::<f64>() / trials as f64;
    let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
    (mean, (var / trials as f64).sqrt())
}

#[test]
fn streaming_estimates_are_unbiased() {
    let data = population();
    // Interleave strata in proportion to their sizes so each has spread from the start.
    let mut keyed: Vec<(f64, Record)> = Vec::new();
    for id in 1..=3u32 {
        let members: Vec<&Record> = data.records().iter().filter(|r| r.stratum == id.into()).collect();
        let n = members.len() as f64;
        keyed.extend(members.into_iter().enumerate().map(|(k, r)| (k as f64 / n, r.clone())));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let stream: Vec<Record> = keyed.into_iter().map(|(_, r)| r).collect();
    let exact = exact_mean(&data, None).unwrap();
    for batch in [1usize, 4, 25] {
        let (mean, se) = stream_estimates(|s| Box::new(SVoila::new(20, s).unwrap()), &stream, batch);
        assert!(
            (mean - exact).abs() < 4.0 * se,
            "svoila b={batch}: {mean} vs {exact} (se {se})"
        );
        let (mean, se) = stream_estimates(|s| Box::new(SsUnif::new(20, s).unwrap()), &stream, batch);
        assert!(
            (mean - exact).abs() < 4.0 * se,
            "ssunif b={batch}: {mean} vs {exact} (se {se})"
        );
    }
}
