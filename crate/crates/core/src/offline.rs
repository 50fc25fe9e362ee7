//! Two-pass samplers over a static dataset.
//!
//! Pass one collects per-stratum counts and spreads, an allocation rule turns
//! them into sample sizes, and pass two draws each stratum's sample by keeping
//! its smallest random keys.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::allocation::{self, AllocationInput, Policy};
use crate::error::{Error, Result};
use crate::model::{draw_key, Allocation, Record, Share, StratifiedSample, StratumId, StratumStats, StratumSummary};
use crate::reduction::{fast_ssr_sizes, round_min_objective};

/// An in-memory, rescannable collection of records. Every pass visits the
/// records in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    records: Vec<Record>,
}

impl Dataset {
    pub fn new(records: Vec<Record>) -> Self {
        Self { records }
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: Record) {
        self.records.push(record);
    }

    /// Per-stratum statistics in `StratumId` order.
    pub fn stats(&self) -> BTreeMap<StratumId, StratumStats> {
        let mut stats: BTreeMap<StratumId, StratumStats> = BTreeMap::new();
        for r in &self.records {
            match stats.get_mut(&r.stratum) {
                Some(s) => s.push(r.value),
                None => {
                    stats.insert(r.stratum.clone(), StratumStats::new().updated(r.value));
                }
            }
        }
        stats
    }

    pub fn summaries(&self) -> Vec<StratumSummary> {
        self.stats()
            .iter()
            .map(|(id, s)| StratumSummary::from_stats(id.clone(), s))
            .collect()
    }
}

impl FromIterator<Record> for Dataset {
    fn from_iter<I: IntoIterator<Item = Record>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Variance-optimal allocation of `budget` records: reduces the full dataset,
/// whose variance is zero, down to `min(M, n)` records. Real-valued, with
/// `cap = n_i`.
pub fn voila_allocate(stats: &[StratumSummary], budget: u64) -> Result<Allocation> {
    if budget == 0 {
        return Err(Error::InvalidInput("budget must be at least 1".into()));
    }
    let weights: Vec<f64> = stats.iter().map(StratumSummary::weight).collect();
    let sizes: Vec<f64> = stats.iter().map(|s| s.count as f64).collect();
    let target = (budget as f64).min(sizes.iter().sum());
    let out = fast_ssr_sizes(&weights, &sizes, target, |a, b| stats[a].stratum.cmp(&stats[b].stratum));
    Ok(with_caps(stats, out, budget))
}

/// [`voila_allocate`] rounded to whole records with the smallest resulting
/// variance.
pub fn voila_allocate_integer(stats: &[StratumSummary], budget: u64) -> Result<Allocation> {
    let real = voila_allocate(stats, budget)?;
    let weights: Vec<f64> = stats.iter().map(StratumSummary::weight).collect();
    let caps: Vec<f64> = stats.iter().map(|s| s.count as f64).collect();
    let target = real.total().round();
    let out = round_min_objective(&weights, &caps, &real.sizes(), target, |a, b| {
        stats[a].stratum.cmp(&stats[b].stratum)
    });
    Ok(with_caps(stats, out, budget))
}

fn with_caps(stats: &[StratumSummary], sizes: Vec<f64>, budget: u64) -> Allocation {
    let shares = stats
        .iter()
        .zip(sizes)
        .map(|(s, size)| Share {
            stratum: s.stratum.clone(),
            size,
            cap: s.count as f64,
        })
        .collect();
    Allocation::new(shares, budget as f64)
}

/// Second pass: a uniform sample without replacement of exactly `alloc[i]`
/// records from every stratum. Strata missing from `alloc` get nothing.
///
/// Every record draws a key from a generator seeded with `seed`; each stratum
/// keeps the records with its smallest keys.
pub fn materialize(dataset: &Dataset, alloc: &Allocation, seed: u64) -> Result<StratifiedSample> {
    let wanted: HashMap<&StratumId, usize> = alloc
        .counts()
        .into_iter()
        .zip(alloc.shares())
        .map(|((_, k), share)| (&share.stratum, k as usize))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = StratifiedSample::new(alloc.total().max(0.0).floor() as usize);
    for share in alloc.shares() {
        sample.slot_index(&share.stratum);
    }
    let mut limits: Vec<usize> = sample.ids().iter().map(|id| wanted[id]).collect();

    for r in dataset.records() {
        let key = draw_key(&mut rng);
        let i = sample.slot_index(&r.stratum);
        if i == limits.len() {
            limits.push(0);
        }
        let slot = sample.slot_mut(i);
        slot.stats.push(r.value);
        if slot.sample.offer(r.value, key) && slot.sample.len() > limits[i] {
            slot.sample.evict_largest(1);
        }
    }

    for i in sample.sorted_indices() {
        let slot = sample.slot(i);
        if slot.sample.len() < limits[i] {
            return Err(Error::AllocationInfeasible {
                stratum: sample.id(i).clone(),
                requested: limits[i] as u64,
                available: slot.stats.count(),
            });
        }
    }
    Ok(sample)
}

/// Both passes with the allocation rule `policy`.
///
/// `neyman` is floored and then truncated at `n_i`, leaving the memory of
/// bounded strata unused; the returned allocation is what was materialized.
/// The other rules are rounded to exactly `min(M, n)` records. With
/// `M >= n` every rule keeps the whole dataset.
pub fn offline_pipeline(
    dataset: &Dataset,
    policy: Policy,
    budget: u64,
    seed: u64,
) -> Result<(Allocation, StratifiedSample)> {
    if dataset.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let stats = dataset.summaries();
    let alloc = allocate_integer(&stats, policy, budget)?;
    let sample = materialize(dataset, &alloc, seed)?;
    Ok((alloc, sample))
}

/// The integer allocation `offline_pipeline` materializes for `policy`.
pub fn allocate_integer(stats: &[StratumSummary], policy: Policy, budget: u64) -> Result<Allocation> {
    let n: u64 = stats.iter().map(|s| s.count).sum();
    if budget >= n {
        let full = stats.iter().map(|s| s.count as f64).collect();
        return Ok(with_caps(stats, full, budget));
    }
    let input = AllocationInput::new(stats.to_vec(), budget)?;
    match policy {
        Policy::Voila => voila_allocate_integer(stats, budget),
        Policy::Neyman => Ok(allocation::neyman(&input)?.floored().truncated()),
        Policy::NeymanPlus => allocation::integerize(&allocation::neyman_plus(&input)?),
        Policy::Proportional => allocation::integerize(&allocation::proportional(&input)?),
        Policy::Uniform => allocation::integerize(&allocation::uniform_redistribute(&input)),
    }
}
