//! Streaming stratified samplers.
//!
//! Every arriving element draws a uniform key. Stratum `i` keeps a threshold
//! `d_i`, the smallest key it has ever discarded, and only admits elements
//! with `key <= d_i`; evictions always drop the largest keys. The retained set
//! of each stratum is therefore always its smallest keys so far, whatever
//! sizes the eviction policy picks.
//!
//! [`SVoila`] evicts to keep the estimator variance as small as possible.
//! [`SsUnif`] and [`Reservoir`] are the equal-share and plain uniform baselines.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::allocation::{integerize, uniform_redistribute, AllocationInput};
use crate::error::{Error, Result};
use crate::estimator::sample_variance;
use crate::model::{draw_key, Allocation, Record, StratifiedSample, StratumSummary};
use crate::reduction::{fast_ssr_sizes, pick_single, round_min_objective};

/// A non-empty group of consecutive stream elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    records: Vec<Record>,
}

impl Minibatch {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidInput("minibatch must not be empty".into()));
        }
        Ok(Self { records })
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
}

/// Sizes, statistics and variance of a sampler at a batch boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub elements_seen: u64,
    pub allocation: Allocation,
    pub stats: Vec<StratumSummary>,
    /// `None` while some stratum with spread has no sample.
    pub variance: Option<f64>,
}

impl Snapshot {
    fn of(sample: &StratifiedSample) -> Self {
        Self {
            elements_seen: sample.observed(),
            allocation: sample.sizes(),
            stats: sample.summaries(),
            variance: sample_variance(sample).ok().map(|r| r.total_variance),
        }
    }
}

/// A sampler that consumes a stream one batch at a time.
pub trait StreamSampler {
    /// Processes `batch` as one minibatch (the first `M` elements of the stream
    /// may be split off to initialize the sampler).
    fn feed(&mut self, batch: &[Record]) -> Result<()>;

    fn sample(&self) -> &StratifiedSample;

    fn snapshot(&self) -> Snapshot {
        Snapshot::of(self.sample())
    }
}

/// S-VOILA: minibatch stratified sampling with variance-optimal evictions.
#[derive(Debug, Clone)]
pub struct SVoila {
    sample: StratifiedSample,
    rng: ChaCha8Rng,
    initialized: bool,
    held: usize,
    weights: Vec<f64>,
    sizes: Vec<f64>,
}

impl SVoila {
    pub fn new(budget: usize, seed: u64) -> Result<Self> {
        if budget == 0 {
            return Err(Error::InvalidInput("budget must be at least 1".into()));
        }
        Ok(Self {
            sample: StratifiedSample::new(budget),
            rng: ChaCha8Rng::seed_from_u64(seed),
            initialized: false,
            held: 0,
            weights: Vec::new(),
            sizes: Vec::new(),
        })
    }

    pub fn budget(&self) -> usize {
        self.sample.budget()
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Stores the first elements of the stream, each with a fresh key. At most
    /// `M`; fewer only when the stream ends early.
    pub fn init(&mut self, first: &[Record]) -> Result<()> {
        if self.initialized {
            return Err(Error::InvalidInput("sampler is already initialized".into()));
        }
        if first.len() > self.budget() {
            return Err(Error::InvalidInput(format!(
                "{} initial elements for a budget of {}",
                first.len(),
                self.budget()
            )));
        }
        self.load(first);
        self.initialized = true;
        Ok(())
    }

    fn load(&mut self, records: &[Record]) {
        for r in records {
            let key = draw_key(&mut self.rng);
            let i = self.sample.slot_index(&r.stratum);
            let slot = self.sample.slot_mut(i);
            slot.stats.push(r.value);
            slot.sample.offer(r.value, key);
        }
        self.held += records.len();
    }

    /// One minibatch: update statistics and admit elements under the
    /// thresholds, then evict back down to `M`.
    pub fn process(&mut self, batch: &[Record]) -> Result<()> {
        if !self.initialized {
            return Err(Error::NotInitialized);
        }
        let mut admitted = 0;
        for r in batch {
            let i = self.sample.slot_index(&r.stratum);
            let key = draw_key(&mut self.rng);
            let slot = self.sample.slot_mut(i);
            slot.stats.push(r.value);
            if slot.sample.offer(r.value, key) {
                admitted += 1;
            }
        }
        self.held += admitted;
        let excess = self.held.saturating_sub(self.budget());
        match excess {
            0 => {}
            1 => self.evict_one()?,
            _ => self.evict_to_budget(),
        }
        self.held -= excess;
        debug_assert_eq!(self.held, self.sample.total_size());
        Ok(())
    }

    fn load_weights(&mut self) {
        self.weights.clear();
        self.sizes.clear();
        for slot in self.sample.slots() {
            self.weights.push(slot.stats.weight());
            self.sizes.push(slot.sample.len() as f64);
        }
    }

    fn evict_one(&mut self) -> Result<()> {
        self.load_weights();
        let ids = self.sample.ids();
        let i = pick_single(&self.weights, &self.sizes, |a, b| ids[a].cmp(&ids[b])).ok_or(Error::NothingToEvict)?;
        assert_eq!(self.sample.slot_mut(i).sample.evict_largest(1), 1);
        Ok(())
    }

    fn evict_to_budget(&mut self) {
        self.load_weights();
        let target = self.budget() as f64;
        let ids = self.sample.ids();
        let by_id = |a: usize, b: usize| ids[a].cmp(&ids[b]);
        let real = fast_ssr_sizes(&self.weights, &self.sizes, target, by_id);
        let keep = round_min_objective(&self.weights, &self.sizes, &real, target, by_id);
        for (i, k) in keep.into_iter().enumerate() {
            let drop = (self.sizes[i] - k) as usize;
            if drop > 0 {
                assert_eq!(self.sample.slot_mut(i).sample.evict_largest(drop), drop);
            }
        }
        assert_eq!(self.sample.total_size(), self.budget());
    }
}

impl StreamSampler for SVoila {
    fn feed(&mut self, batch: &[Record]) -> Result<()> {
        let mut rest = batch;
        if !self.initialized {
            let room = self.budget() - self.held;
            let (head, tail) = batch.split_at(room.min(batch.len()));
            self.load(head);
            if self.held < self.budget() {
                return Ok(());
            }
            self.initialized = true;
            rest = tail;
        }
        if rest.is_empty() {
            return Ok(());
        }
        self.process(rest)
    }

    fn sample(&self) -> &StratifiedSample {
        &self.sample
    }
}

/// Equal memory for every observed stratum, redistributing what bounded
/// strata cannot use.
#[derive(Debug, Clone)]
pub struct SsUnif {
    sample: StratifiedSample,
    rng: ChaCha8Rng,
}

impl SsUnif {
    pub fn new(budget: usize, seed: u64) -> Result<Self> {
        if budget == 0 {
            return Err(Error::InvalidInput("budget must be at least 1".into()));
        }
        Ok(Self {
            sample: StratifiedSample::new(budget),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

impl StreamSampler for SsUnif {
    fn feed(&mut self, batch: &[Record]) -> Result<()> {
        for r in batch {
            let i = self.sample.slot_index(&r.stratum);
            let key = draw_key(&mut self.rng);
            let slot = self.sample.slot_mut(i);
            slot.stats.push(r.value);
            slot.sample.offer(r.value, key);
        }
        if self.sample.total_size() <= self.sample.budget() {
            return Ok(());
        }
        let order = self.sample.sorted_indices();
        let input = AllocationInput::new(self.sample.summaries(), self.sample.budget() as u64)?;
        let target = integerize(&uniform_redistribute(&input))?;
        for (&i, share) in order.iter().zip(target.shares()) {
            let held = self.sample.slot(i).sample.len();
            let keep = share.size as usize;
            if held > keep {
                self.sample.slot_mut(i).sample.evict_largest(held - keep);
            }
        }
        Ok(())
    }

    fn sample(&self) -> &StratifiedSample {
        &self.sample
    }
}

#[derive(Debug, Clone, Copy)]
struct Held {
    key: f64,
    slot: usize,
}

impl PartialEq for Held {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Held {}

impl PartialOrd for Held {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Held {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.total_cmp(&other.key)
    }
}

/// A uniform sample of `M` elements from the whole stream, ignoring strata:
/// the `M` smallest keys overall.
#[derive(Debug, Clone)]
pub struct Reservoir {
    sample: StratifiedSample,
    rng: ChaCha8Rng,
    heap: BinaryHeap<Held>,
}

impl Reservoir {
    pub fn new(budget: usize, seed: u64) -> Result<Self> {
        if budget == 0 {
            return Err(Error::InvalidInput("budget must be at least 1".into()));
        }
        Ok(Self {
            sample: StratifiedSample::new(budget),
            rng: ChaCha8Rng::seed_from_u64(seed),
            heap: BinaryHeap::with_capacity(budget + 1),
        })
    }
}

impl StreamSampler for Reservoir {
    fn feed(&mut self, batch: &[Record]) -> Result<()> {
        let m = self.sample.budget();
        for r in batch {
            let i = self.sample.slot_index(&r.stratum);
            let key = draw_key(&mut self.rng);
            self.sample.slot_mut(i).stats.push(r.value);
            if self.heap.len() == m && self.heap.peek().is_some_and(|top| key >= top.key) {
                continue;
            }
            self.sample.slot_mut(i).sample.offer(r.value, key);
            self.heap.push(Held { key, slot: i });
            if self.heap.len() > m {
                let top = self.heap.pop().expect("heap is over budget");
                self.sample.slot_mut(top.slot).sample.evict_largest(1);
            }
        }
        Ok(())
    }

    fn sample(&self) -> &StratifiedSample {
        &self.sample
    }
}

/// Feeds `records` to `sampler` in batches of `batch` elements.
pub fn run_batches<S: StreamSampler + ?Sized>(sampler: &mut S, records: &[Record], batch: usize) -> Result<()> {
    if batch == 0 {
        return Err(Error::InvalidInput("batch size must be at least 1".into()));
    }
    for chunk in records.chunks(batch) {
        sampler.feed(chunk)?;
    }
    Ok(())
}

/// S-VOILA over a whole in-memory stream with fixed batch size `batch`.
pub fn svoila_stream(budget: usize, records: &[Record], batch: usize, seed: u64) -> Result<StratifiedSample> {
    let mut s = SVoila::new(budget, seed)?;
    run_batches(&mut s, records, batch)?;
    Ok(s.sample)
}

pub fn ssunif_stream(budget: usize, records: &[Record], batch: usize, seed: u64) -> Result<StratifiedSample> {
    let mut s = SsUnif::new(budget, seed)?;
    run_batches(&mut s, records, batch)?;
    Ok(s.sample)
}

pub fn reservoir_stream(budget: usize, records: &[Record], seed: u64) -> Result<StratifiedSample> {
    let mut s = Reservoir::new(budget, seed)?;
    run_batches(&mut s, records, records.len().max(1))?;
    Ok(s.sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StratumId;
    use crate::reduction::{single_ssr, ReductionInstance, ReductionRow};
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn recs(pairs: &[(u32, f64)]) -> Vec<Record> {
        pairs.iter().map(|&(s, v)| Record::new(s, v)).collect()
    }

    fn sizes_of(s: &StratifiedSample) -> Vec<f64> {
        s.sizes().sizes()
    }

    #[test]
    fn init_loads_everything() {
        let mut s = SVoila::new(4, 1).unwrap();
        assert!(matches!(s.process(&recs(&[(1, 1.0)])), Err(Error::NotInitialized)));
        let first = recs(&[(1, 1.0), (1, 2.0), (1, 4.0), (1, 5.0)]);
        s.init(&first).unwrap();
        let slot = s.sample().get(&StratumId::Index(1)).unwrap();
        assert_eq!(slot.sample.len(), 4);
        assert_eq!(slot.sample.threshold(), 1.0);
        assert_eq!(slot.stats.count(), 4);
        assert!((slot.stats.mean() - 3.0).abs() < 1e-12);
        assert!((slot.stats.variance() - 2.5).abs() < 1e-12);

        let mut one = SVoila::new(1, 1).unwrap();
        one.feed(&recs(&[(3, 7.0)])).unwrap();
        assert!(one.is_initialized());
        assert_eq!(one.sample().total_size(), 1);
        assert!(SVoila::new(0, 1).is_err());
    }

    #[test]
    fn single_admission_follows_single_ssr() {
        // After the arrival both strata hold {0, 2, 0} in full, so (w, s) tie
        // and the lower id loses an element.
        let mut s = SVoila::new(5, 5).unwrap();
        s.feed(&recs(&[(1, 0.0), (1, 2.0), (1, 0.0), (2, 0.0), (2, 2.0)]))
            .unwrap();
        s.feed(&recs(&[(2, 0.0)])).unwrap();
        let stats = s.sample().summaries();
        let rows = stats
            .iter()
            .map(|x| ReductionRow::new(x.stratum.clone(), x.weight(), 3.0))
            .collect();
        let expect = single_ssr(&ReductionInstance::new(rows, 5.0).unwrap()).unwrap();
        assert_eq!(expect, StratumId::Index(1));
        assert_eq!(sizes_of(s.sample()), vec![2.0, 3.0]);
        assert!(s.sample().get(&expect).unwrap().sample.threshold() < 1.0);
        assert_eq!(s.sample().get(&StratumId::Index(2)).unwrap().sample.threshold(), 1.0);
    }

    #[test]
    fn zero_spread_newcomer_is_evicted_first() {
        let mut s = SVoila::new(6, 5).unwrap();
        s.feed(&recs(&[(2, 0.0), (2, 2.0), (1, 0.0), (1, 2.0), (3, 0.0), (3, 2.0)]))
            .unwrap();
        s.feed(&recs(&[(4, 9.0)])).unwrap();
        assert_eq!(sizes_of(s.sample()), vec![2.0, 2.0, 2.0, 0.0]);
    }

    #[test]
    fn rejected_keys_change_only_stats() {
        let mut s = SVoila::new(3, 11).unwrap();
        let stream: Vec<Record> = (0..400).map(|k| Record::new(k % 2, (k % 7) as f64)).collect();
        run_batches(&mut s, &stream, 50).unwrap();
        let mut checked = 0;
        for _ in 0..200 {
            // Peek at the next key and send it to a stratum that will refuse it.
            let key = draw_key(&mut s.rng.clone());
            let Some(i) = (0..2).find(|&i| s.sample.slot(i).sample.threshold() < key) else {
                s.feed(&[Record::new(0u32, 1.0)]).unwrap();
                continue;
            };
            let id = s.sample.id(i).clone();
            let keys: Vec<Vec<f64>> = s.sample.slots().iter().map(|x| x.sample.keys()).collect();
            let count = s.sample.slot(i).stats.count();
            s.feed(&[Record::new(id, 1.0)]).unwrap();
            let after: Vec<Vec<f64>> = s.sample.slots().iter().map(|x| x.sample.keys()).collect();
            assert_eq!(keys, after);
            assert_eq!(s.sample.slot(i).stats.count(), count + 1);
            checked += 1;
        }
        assert!(checked > 100);
    }

    #[test]
    fn new_stratum_always_enters() {
        let mut s = SVoila::new(5, 2).unwrap();
        let stream: Vec<Record> = (0..500).map(|k| Record::new(1u32, k as f64)).collect();
        run_batches(&mut s, &stream, 1).unwrap();
        let d1 = s.sample().get(&StratumId::Index(1)).unwrap().sample.threshold();
        s.feed(&recs(&[(2, 3.0)])).unwrap();
        let slot2 = s.sample().get(&StratumId::Index(2)).unwrap();
        assert_eq!(slot2.stats.count(), 1);
        // Zero spread, so it is evicted again at once and stratum 1 keeps its
        // threshold.
        assert_eq!(slot2.sample.len(), 0);
        assert!(slot2.sample.threshold() < 1.0);
        assert_eq!(s.sample().get(&StratumId::Index(1)).unwrap().sample.threshold(), d1);
    }

    #[test]
    fn ssunif_examples() {
        let two: Vec<Record> = (0..1000).map(|k| Record::new(k % 2, k as f64)).collect();
        assert_eq!(sizes_of(&ssunif_stream(10, &two, 1, 4).unwrap()), vec![5.0, 5.0]);
        let mut bounded = recs(&[(1, 0.0), (1, 1.0)]);
        bounded.extend((0..200).map(|k| Record::new(2u32, k as f64)));
        assert_eq!(sizes_of(&ssunif_stream(10, &bounded, 1, 4).unwrap()), vec![2.0, 8.0]);
    }

    #[test]
    fn ssunif_with_one_stratum_is_reservoir() {
        let stream: Vec<Record> = (0..300).map(|k| Record::new(1u32, k as f64)).collect();
        let a = ssunif_stream(20, &stream, 1, 9).unwrap().records();
        let b = reservoir_stream(20, &stream, 9).unwrap().records();
        assert_eq!(a, b);
    }

    #[test]
    fn reservoir_keeps_short_stream() {
        let stream = recs(&[(1, 1.0), (2, 2.0), (1, 3.0)]);
        assert_eq!(reservoir_stream(5, &stream, 0).unwrap().total_size(), 3);

        let long: Vec<Record> = (0..100).map(|k| Record::new(k % 3, k as f64)).collect();
        let got = reservoir_stream(10, &long, 3).unwrap();
        let mut all: Vec<(f64, f64)> = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for r in &long {
            all.push((draw_key(&mut rng), r.value));
        }
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut expect: Vec<f64> = all[..10].iter().map(|p| p.1).collect();
        expect.sort_by(f64::total_cmp);
        let mut values: Vec<f64> = got.records().iter().map(|r| r.value).collect();
        values.sort_by(f64::total_cmp);
        assert_eq!(values, expect);
    }

    fn arb_stream() -> impl Strategy<Value = (Vec<(u32, f64)>, usize, usize)> {
        (
            prop::collection::vec((0u32..6, -50.0f64..50.0), 0..800),
            1usize..40,
            1usize..60,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn svoila_budget_and_thresholds((stream, m, b) in arb_stream(), seed in any::<u64>()) {
            let stream = recs(&stream);
            let mut s = SVoila::new(m, seed).unwrap();
            let mut last: HashMap<StratumId, f64> = HashMap::new();
            for (k, chunk) in stream.chunks(b).enumerate() {
                s.feed(chunk).unwrap();
                let seen = ((k + 1) * b).min(stream.len());
                prop_assert_eq!(s.sample().total_size(), seen.min(m));
                for slot in s.sample().slots() {
                    let d = slot.sample.threshold();
                    let prev = last.insert(slot.sample.stratum().clone(), d).unwrap_or(1.0);
                    prop_assert!(d <= prev);
                    prop_assert!(slot.sample.max_key().is_none_or(|x| x <= d));
                }
            }
        }

        #[test]
        fn retained_keys_are_smallest_ever((stream, m, b) in arb_stream(), seed in any::<u64>()) {
            let stream = recs(&stream);
            let mut s = SVoila::new(m, seed).unwrap();
            run_batches(&mut s, &stream, b).unwrap();
            // Replay the key sequence: one draw per element, in order.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut history: HashMap<StratumId, Vec<f64>> = HashMap::new();
            for r in &stream {
                history.entry(r.stratum.clone()).or_default().push(draw_key(&mut rng));
            }
            for slot in s.sample().slots() {
                let mut all = history.remove(slot.sample.stratum()).unwrap();
                all.sort_by(f64::total_cmp);
                all.truncate(slot.sample.len());
                prop_assert_eq!(slot.sample.keys(), all);
            }
        }

        #[test]
        fn baselines_respect_budget((stream, m, b) in arb_stream(), seed in any::<u64>()) {
            let stream = recs(&stream);
            let mut u = SsUnif::new(m, seed).unwrap();
            for chunk in stream.chunks(b) {
                u.feed(chunk).unwrap();
                prop_assert!(u.sample().total_size() <= m);
            }
            let r = reservoir_stream(m, &stream, seed).unwrap();
            prop_assert_eq!(r.total_size(), stream.len().min(m));
            prop_assert_eq!(r.observed(), stream.len() as u64);
        }
    }
}
