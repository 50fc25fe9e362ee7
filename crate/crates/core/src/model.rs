//! Domain types shared by every sampler: stratum identifiers, streaming
//! per-stratum moments, key-ordered per-stratum samples and allocation vectors.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Degrees of freedom subtracted from the count when turning `m2` into a
/// variance. Zero means population variance (divisor `n_i`), which is what
/// every variance computation in this crate assumes.
pub const VARIANCE_DDOF: u64 = 0;

/// Opaque stratum identifier.
///
/// Small integers and free-form names are both supported. Ordering is total:
/// all `Index` ids sort before all `Name` ids, and within a kind the natural
/// order applies. Every tie-break in the crate uses this order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(untagged)]
pub enum StratumId {
    Index(u32),
    Name(String),
}

impl StratumId {
    /// Integers become `Index`, anything else a `Name`.
    pub fn parse(s: &str) -> Self {
        match s.trim().parse::<u32>() {
            Ok(i) => StratumId::Index(i),
            Err(_) => StratumId::Name(s.to_string()),
        }
    }
}

// Strings that look like integers become `Index`, as in `parse`, so JSON map
// keys round-trip.
impl<'de> Deserialize<'de> for StratumId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(u32),
            Name(String),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Index(i) => StratumId::Index(i),
            Raw::Name(s) => StratumId::parse(&s),
        })
    }
}

impl fmt::Display for StratumId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StratumId::Index(i) => write!(f, "{i}"),
            StratumId::Name(s) => f.write_str(s),
        }
    }
}

impl FromStr for StratumId {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(StratumId::parse(s))
    }
}

impl From<u32> for StratumId {
    fn from(i: u32) -> Self {
        StratumId::Index(i)
    }
}

impl From<&str> for StratumId {
    fn from(s: &str) -> Self {
        StratumId::Name(s.to_string())
    }
}

impl From<String> for StratumId {
    fn from(s: String) -> Self {
        StratumId::Name(s)
    }
}

/// Single-pass count, mean and sum of squared deviations (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StratumStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl StratumStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_values<I: IntoIterator<Item = f64>>(values: I) -> Self {
        let mut stats = Self::new();
        for v in values {
            stats.push(v);
        }
        stats
    }

    pub fn push(&mut self, value: f64) {
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
        if self.m2 < 0.0 {
            self.m2 = 0.0;
        }
    }

    /// Returns the statistics with `value` folded in.
    pub fn updated(mut self, value: f64) -> Self {
        self.push(value);
        self
    }

    /// Statistics of the concatenation of both input multisets (Chan et al.).
    pub fn merge(&self, other: &StratumStats) -> StratumStats {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let count = self.count + other.count;
        let (na, nb, n) = (self.count as f64, other.count as f64, count as f64);
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * nb / n;
        let m2 = self.m2 + other.m2 + delta * delta * na * nb / n;
        StratumStats {
            count,
            mean,
            m2: m2.max(0.0),
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn m2(&self) -> f64 {
        self.m2
    }

    pub fn variance(&self) -> f64 {
        match self.count.saturating_sub(VARIANCE_DDOF) {
            0 => 0.0,
            dof => self.m2 / dof as f64,
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// `n_i * sigma_i`, the Neyman weight of the stratum.
    pub fn weight(&self) -> f64 {
        self.count as f64 * self.std_dev()
    }
}

/// Size and spread of one stratum: the inputs every allocation rule needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    pub stratum: StratumId,
    pub count: u64,
    pub sigma: f64,
}

impl StratumSummary {
    pub fn new(stratum: impl Into<StratumId>, count: u64, sigma: f64) -> Self {
        Self {
            stratum: stratum.into(),
            count,
            sigma,
        }
    }

    pub fn from_stats(stratum: StratumId, stats: &StratumStats) -> Self {
        Self {
            stratum,
            count: stats.count(),
            sigma: stats.std_dev(),
        }
    }

    pub fn weight(&self) -> f64 {
        self.count as f64 * self.sigma
    }
}

/// Draws a key uniformly from the open interval (0, 1).
///
/// `Rng::random::<f64>()` samples `[0, 1)`, so an exact zero is redrawn.
pub fn draw_key<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// One data element: the stratum it belongs to and its value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub stratum: StratumId,
    pub value: f64,
}

impl Record {
    pub fn new(stratum: impl Into<StratumId>, value: f64) -> Self {
        Self {
            stratum: stratum.into(),
            value,
        }
    }
}

/// A stream element tagged with its stratum and random key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedRecord {
    pub stratum: StratumId,
    pub value: f64,
    pub key: f64,
}

#[derive(Debug, Clone, Copy)]
struct KeyedValue {
    key: f64,
    seq: u64,
    value: f64,
}

impl PartialEq for KeyedValue {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for KeyedValue {}

impl PartialOrd for KeyedValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for KeyedValue {
    // Equal keys: the later arrival counts as larger and is evicted first.
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.total_cmp(&other.key).then(self.seq.cmp(&other.seq))
    }
}

/// The retained elements of one stratum: always its smallest keys so far.
///
/// `threshold` is the smallest key ever discarded from this stratum (1 when
/// nothing has been discarded). Arriving elements are admitted only when their
/// key does not exceed it, which keeps the sample uniform even while its
/// allotted size grows.
#[derive(Debug, Clone)]
pub struct PerStratumSample {
    stratum: StratumId,
    threshold: f64,
    heap: BinaryHeap<KeyedValue>,
    next_seq: u64,
}

impl PerStratumSample {
    pub fn new(stratum: StratumId) -> Self {
        Self {
            stratum,
            threshold: 1.0,
            heap: BinaryHeap::new(),
            next_seq: 0,
        }
    }

    pub fn stratum(&self) -> &StratumId {
        &self.stratum
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn admits(&self, key: f64) -> bool {
        key <= self.threshold
    }

    /// Inserts the element if its key passes the threshold.
    pub fn offer(&mut self, value: f64, key: f64) -> bool {
        if !self.admits(key) {
            return false;
        }
        self.heap.push(KeyedValue {
            key,
            seq: self.next_seq,
            value,
        });
        self.next_seq += 1;
        true
    }

    pub fn max_key(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.key)
    }

    /// Deletes the `count` largest-key elements and lowers the threshold to the
    /// smallest key discarded. Returns the number actually removed.
    pub fn evict_largest(&mut self, count: usize) -> usize {
        let mut removed = 0;
        let mut smallest = None;
        while removed < count {
            match self.heap.pop() {
                Some(e) => {
                    smallest = Some(e.key);
                    removed += 1;
                }
                None => break,
            }
        }
        if let Some(key) = smallest {
            assert!(
                key <= self.threshold,
                "threshold would increase: {key} > {}",
                self.threshold
            );
            self.threshold = key;
        }
        removed
    }

    /// Retained `(value, key)` pairs in no particular order.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.heap.iter().map(|e| (e.value, e.key))
    }

    pub fn keys(&self) -> Vec<f64> {
        let mut keys: Vec<f64> = self.heap.iter().map(|e| e.key).collect();
        keys.sort_by(f64::total_cmp);
        keys
    }

    pub fn to_records(&self) -> Vec<WeightedRecord> {
        let mut entries: Vec<KeyedValue> = self.heap.iter().copied().collect();
        entries.sort();
        entries
            .into_iter()
            .map(|e| WeightedRecord {
                stratum: self.stratum.clone(),
                value: e.value,
                key: e.key,
            })
            .collect()
    }

    pub fn sample_mean(&self) -> Option<f64> {
        if self.heap.is_empty() {
            return None;
        }
        let sum: f64 = self.heap.iter().map(|e| e.value).sum();
        Some(sum / self.heap.len() as f64)
    }
}

/// One stratum's sample together with the statistics of everything observed.
#[derive(Debug, Clone)]
pub struct StratumSlot {
    pub sample: PerStratumSample,
    pub stats: StratumStats,
}

/// Per-stratum samples under a global budget of `M` records.
///
/// Strata are stored densely in first-seen order; anything that reports
/// strata to callers does so in `StratumId` order.
#[derive(Debug, Clone)]
pub struct StratifiedSample {
    budget: usize,
    ids: Vec<StratumId>,
    slots: Vec<StratumSlot>,
    index: HashMap<StratumId, usize>,
}

impl StratifiedSample {
    pub fn new(budget: usize) -> Self {
        Self {
            budget,
            ids: Vec::new(),
            slots: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn num_strata(&self) -> usize {
        self.slots.len()
    }

    /// Dense index for `stratum`, creating an empty slot (threshold 1) on first sight.
    pub fn slot_index(&mut self, stratum: &StratumId) -> usize {
        if let Some(&i) = self.index.get(stratum) {
            return i;
        }
        let i = self.slots.len();
        self.ids.push(stratum.clone());
        self.slots.push(StratumSlot {
            sample: PerStratumSample::new(stratum.clone()),
            stats: StratumStats::new(),
        });
        self.index.insert(stratum.clone(), i);
        i
    }

    pub fn position(&self, stratum: &StratumId) -> Option<usize> {
        self.index.get(stratum).copied()
    }

    pub fn slot(&self, i: usize) -> &StratumSlot {
        &self.slots[i]
    }

    pub fn slot_mut(&mut self, i: usize) -> &mut StratumSlot {
        &mut self.slots[i]
    }

    pub fn id(&self, i: usize) -> &StratumId {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[StratumId] {
        &self.ids
    }

    pub fn get(&self, stratum: &StratumId) -> Option<&StratumSlot> {
        self.position(stratum).map(|i| &self.slots[i])
    }

    pub fn slots(&self) -> &[StratumSlot] {
        &self.slots
    }

    pub fn total_size(&self) -> usize {
        self.slots.iter().map(|s| s.sample.len()).sum()
    }

    pub fn observed(&self) -> u64 {
        self.slots.iter().map(|s| s.stats.count()).sum()
    }

    /// Dense indices sorted by `StratumId`.
    pub fn sorted_indices(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.ids.len()).collect();
        order.sort_by(|&a, &b| self.ids[a].cmp(&self.ids[b]));
        order
    }

    /// Stratum summaries in `StratumId` order.
    pub fn summaries(&self) -> Vec<StratumSummary> {
        self.sorted_indices()
            .into_iter()
            .map(|i| StratumSummary::from_stats(self.ids[i].clone(), &self.slots[i].stats))
            .collect()
    }

    /// Current per-stratum sample sizes in `StratumId` order.
    pub fn sizes(&self) -> Allocation {
        let shares = self
            .sorted_indices()
            .into_iter()
            .map(|i| Share {
                stratum: self.ids[i].clone(),
                size: self.slots[i].sample.len() as f64,
                cap: self.slots[i].stats.count() as f64,
            })
            .collect();
        Allocation::new(shares, self.budget as f64)
    }

    /// Every retained record, grouped by stratum in `StratumId` order.
    pub fn records(&self) -> Vec<WeightedRecord> {
        self.sorted_indices()
            .into_iter()
            .flat_map(|i| self.slots[i].sample.to_records())
            .collect()
    }
}

/// One stratum's entry in an allocation: its size and the most it may hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Share {
    pub stratum: StratumId,
    pub size: f64,
    pub cap: f64,
}

/// A per-stratum sample-size vector under a total `budget`.
///
/// Entries keep the order of the input they were computed from. `cap` is the
/// feasibility bound: `n_i` for allocation rules, the current sample size for
/// reductions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    shares: Vec<Share>,
    budget: f64,
}

impl Allocation {
    pub fn new(shares: Vec<Share>, budget: f64) -> Self {
        Self { shares, budget }
    }

    pub fn shares(&self) -> &[Share] {
        &self.shares
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.shares.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shares.is_empty()
    }

    pub fn sizes(&self) -> Vec<f64> {
        self.shares.iter().map(|s| s.size).collect()
    }

    pub fn total(&self) -> f64 {
        self.shares.iter().map(|s| s.size).sum()
    }

    pub fn get(&self, stratum: &StratumId) -> Option<f64> {
        self.shares.iter().find(|s| &s.stratum == stratum).map(|s| s.size)
    }

    pub fn is_integral(&self) -> bool {
        self.shares.iter().all(|s| s.size.fract() == 0.0)
    }

    /// Sizes as record counts. Fractional sizes are rounded down.
    pub fn counts(&self) -> Vec<(StratumId, u64)> {
        self.shares
            .iter()
            .map(|s| (s.stratum.clone(), s.size.max(0.0).floor() as u64))
            .collect()
    }

    /// Clamps every entry to its cap, leaving the freed budget unused.
    pub fn truncated(&self) -> Allocation {
        let shares = self
            .shares
            .iter()
            .map(|s| Share {
                size: s.size.min(s.cap),
                ..s.clone()
            })
            .collect();
        Allocation::new(shares, self.budget)
    }

    /// Rounds every entry down.
    pub fn floored(&self) -> Allocation {
        let shares = self
            .shares
            .iter()
            .map(|s| Share {
                size: s.size.floor(),
                ..s.clone()
            })
            .collect();
        Allocation::new(shares, self.budget)
    }

    /// The same allocation with entries in `StratumId` order.
    pub fn sorted(&self) -> Allocation {
        let mut shares = self.shares.clone();
        shares.sort_by(|a, b| a.stratum.cmp(&b.stratum));
        Allocation::new(shares, self.budget)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch(values: &[f64]) -> (u64, f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        (values.len() as u64, mean, m2)
    }

    fn rel(a: f64, b: f64) -> f64 {
        let scale = a.abs().max(b.abs());
        if scale == 0.0 {
            0.0
        } else {
            (a - b).abs() / scale
        }
    }

    #[test]
    fn single_value_has_zero_spread() {
        let s = StratumStats::new().updated(5.0);
        assert_eq!(s.count(), 1);
        assert_eq!(s.mean(), 5.0);
        assert_eq!(s.m2(), 0.0);
    }

    #[test]
    fn small_stratum_moments() {
        let s = StratumStats::from_values([1.0, 2.0, 4.0, 2.0, 1.0]);
        assert_eq!(s.count(), 5);
        assert!((s.mean() - 2.0).abs() < 1e-12);
        assert!((s.m2() - 6.0).abs() < 1e-12);
        assert!((s.variance() - 1.2).abs() < 1e-12);
    }

    #[test]
    fn large_stratum_moments() {
        let s = StratumStats::from_values([1000.0, 1050.0, 1200.0, 1300.0]);
        assert_eq!(s.count(), 4);
        assert!((s.mean() - 1137.5).abs() < 1e-9);
        assert!((s.m2() - 56875.0).abs() < 1e-7);
        assert!((s.variance() - 14218.75).abs() < 1e-8);
    }

    #[test]
    fn merge_examples() {
        let x = StratumStats::from_values([3.0, 9.0]);
        assert_eq!(StratumStats::new().merge(&x), x);
        let merged = StratumStats::from_values([1.0, 2.0]).merge(&StratumStats::from_values([4.0, 2.0, 1.0]));
        let (n, mean, m2) = batch(&[1.0, 2.0, 4.0, 2.0, 1.0]);
        assert_eq!(merged.count(), n);
        assert!(rel(merged.mean(), mean) < 1e-12);
        assert!(rel(merged.m2(), m2) < 1e-12);
        let twins = StratumStats::from_values([7.0]).merge(&StratumStats::from_values([7.0]));
        assert_eq!((twins.count(), twins.mean(), twins.m2()), (2, 7.0, 0.0));
    }

    #[test]
    fn stratum_id_order_and_parse() {
        assert_eq!(StratumId::parse("12"), StratumId::Index(12));
        assert_eq!(StratumId::parse("US|co"), StratumId::Name("US|co".into()));
        assert!(StratumId::Index(2) < StratumId::Index(10));
        assert!(StratumId::Index(99) < StratumId::Name("a".into()));
        let json = serde_json::to_string(&vec![StratumId::Index(3), "x".into()]).unwrap();
        assert_eq!(json, r#"[3,"x"]"#);
    }

    #[test]
    fn keys_are_in_open_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let k = draw_key(&mut rng);
            assert!(k > 0.0 && k < 1.0);
        }
    }

    #[test]
    fn eviction_lowers_threshold_to_smallest_discarded() {
        let mut s = PerStratumSample::new(1.into());
        for (i, k) in [0.5, 0.1, 0.9, 0.3].into_iter().enumerate() {
            assert!(s.offer(i as f64, k));
        }
        assert_eq!(s.evict_largest(2), 2);
        assert_eq!(s.threshold(), 0.5);
        assert_eq!(s.keys(), vec![0.1, 0.3]);
        assert!(!s.offer(9.0, 0.6));
        assert!(s.offer(9.0, 0.5));
        assert_eq!(s.evict_largest(0), 0);
        assert_eq!(s.threshold(), 0.5);
    }

    #[test]
    fn duplicate_keys_evict_later_arrival_first() {
        let mut s = PerStratumSample::new(1.into());
        s.offer(1.0, 0.4);
        s.offer(2.0, 0.4);
        s.evict_largest(1);
        let kept: Vec<f64> = s.iter().map(|(v, _)| v).collect();
        assert_eq!(kept, vec![1.0]);
    }

    #[test]
    fn truncate_and_floor() {
        let a = Allocation::new(
            vec![
                Share {
                    stratum: 1.into(),
                    size: 917.4,
                    cap: 100.0,
                },
                Share {
                    stratum: 2.into(),
                    size: 9.2,
                    cap: 1000.0,
                },
            ],
            1000.0,
        );
        assert_eq!(a.truncated().sizes(), vec![100.0, 9.2]);
        assert_eq!(a.floored().sizes(), vec![917.0, 9.0]);
        assert!(!a.is_integral());
        assert!(a.floored().is_integral());
    }

    proptest! {
        #[test]
        fn welford_matches_two_pass(
            values in prop::collection::vec(
                prop_oneof![1e-6f64..1.0, 1.0f64..1e3, 1e3f64..1e6], 1..2_000)
        ) {
            let s = StratumStats::from_values(values.iter().copied());
            let (n, mean, m2) = batch(&values);
            prop_assert_eq!(s.count(), n);
            prop_assert!(rel(s.mean(), mean) < 1e-9);
            let var = m2 / n as f64;
            prop_assert!(rel(s.variance(), var) < 1e-9 || (s.variance() - var).abs() < 1e-9 * mean * mean);
        }

        #[test]
        fn merge_is_associative_and_commutative(
            a in prop::collection::vec(-1e3f64..1e3, 0..50),
            b in prop::collection::vec(-1e3f64..1e3, 0..50),
            c in prop::collection::vec(-1e3f64..1e3, 0..50),
        ) {
            let (sa, sb, sc) = (
                StratumStats::from_values(a.iter().copied()),
                StratumStats::from_values(b.iter().copied()),
                StratumStats::from_values(c.iter().copied()),
            );
            let left = sa.merge(&sb).merge(&sc);
            let right = sa.merge(&sb.merge(&sc));
            let swapped = sb.merge(&sa);
            let ab = sa.merge(&sb);
            prop_assert_eq!(left.count(), right.count());
            prop_assert!((left.mean() - right.mean()).abs() <= 1e-9 * (1.0 + left.mean().abs()));
            prop_assert!((left.m2() - right.m2()).abs() <= 1e-9 * (1.0 + left.m2()));
            prop_assert!((ab.mean() - swapped.mean()).abs() <= 1e-9 * (1.0 + ab.mean().abs()));
            prop_assert!((ab.m2() - swapped.m2()).abs() <= 1e-9 * (1.0 + ab.m2()));
        }

        #[test]
        fn retained_keys_are_smallest_inserted(
            ops in prop::collection::vec((0.0f64..1.0, 0usize..3), 1..200)
        ) {
            // Full-history oracle: every key offered, plus whether it was admitted.
            let mut s = PerStratumSample::new(0.into());
            let mut history: Vec<f64> = Vec::new();
            let mut last_threshold = 1.0;
            for (key, evict) in ops {
                let key = key.max(f64::MIN_POSITIVE);
                s.offer(0.0, key);
                history.push(key);
                s.evict_largest(evict);
                prop_assert!(s.threshold() <= last_threshold);
                last_threshold = s.threshold();
                if let Some(max) = s.max_key() {
                    prop_assert!(max <= s.threshold());
                }
                let mut sorted = history.clone();
                sorted.sort_by(f64::total_cmp);
                sorted.truncate(s.len());
                prop_assert_eq!(s.keys(), sorted);
            }
        }
    }
}
