//! Mean estimation from a stratified sample and the variance of that estimate.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Allocation, StratifiedSample, StratumId, StratumSummary};
use crate::offline::Dataset;

/// `V = (1/n^2) sum_i n_i (n_i - s_i) sigma_i^2 / s_i` with its per-stratum terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub total_variance: f64,
    pub per_stratum_terms: BTreeMap<StratumId, f64>,
    pub used_budget: u64,
}

/// Variance of the stratified mean estimator for sample sizes `sizes`.
///
/// Strata absent from `sizes` have an empty sample. Sizes may be fractional,
/// which evaluates a continuous allocation directly. Strata with no spread
/// contribute 0 whatever their size.
pub fn variance_of_estimate(stats: &[StratumSummary], sizes: &Allocation) -> Result<VarianceReport> {
    let n: f64 = stats.iter().map(|s| s.count as f64).sum();
    let mut terms = BTreeMap::new();
    let mut total = 0.0;
    let mut used = 0.0;
    for s in stats {
        let size = sizes.get(&s.stratum).unwrap_or(0.0);
        used += size;
        let count = s.count as f64;
        let term = if s.weight() == 0.0 || size >= count {
            0.0
        } else if size <= 0.0 {
            return Err(Error::UndefinedVariance(s.stratum.clone()));
        } else {
            count * (count - size) * s.sigma * s.sigma / size / (n * n)
        };
        total += term;
        terms.insert(s.stratum.clone(), term);
    }
    Ok(VarianceReport {
        total_variance: total,
        per_stratum_terms: terms,
        used_budget: (used + 1e-9).floor() as u64,
    })
}

/// [`variance_of_estimate`] for the sample's own statistics and sizes.
pub fn sample_variance(sample: &StratifiedSample) -> Result<VarianceReport> {
    variance_of_estimate(&sample.summaries(), &sample.sizes())
}

/// `sum n_i ybar_i / sum n_i` over the strata in `scope` (all when `None`).
///
/// A stratum with no sample but observed values that are all equal is
/// estimated by that value.
pub fn estimate_mean(sample: &StratifiedSample, scope: Option<&HashSet<StratumId>>) -> Result<f64> {
    let mut weighted = 0.0;
    let mut n = 0u64;
    for i in sample.sorted_indices() {
        let id = sample.id(i);
        if scope.is_some_and(|s| !s.contains(id)) {
            continue;
        }
        let slot = sample.slot(i);
        let count = slot.stats.count();
        if count == 0 {
            continue;
        }
        let mean = match slot.sample.sample_mean() {
            Some(m) => m,
            None if slot.stats.variance() == 0.0 => slot.stats.mean(),
            None => return Err(Error::EmptyScopeStratum(id.clone())),
        };
        weighted += count as f64 * mean;
        n += count;
    }
    if n == 0 {
        return Err(Error::EmptyScope);
    }
    Ok(weighted / n as f64)
}

/// `|approx - exact| / |exact|`.
pub fn relative_error(approx: f64, exact: f64) -> Result<f64> {
    if exact == 0.0 {
        return Err(Error::ZeroExact);
    }
    Ok((approx - exact).abs() / exact.abs())
}

/// Arithmetic mean of every in-scope record.
pub fn exact_mean(dataset: &Dataset, scope: Option<&HashSet<StratumId>>) -> Result<f64> {
    let (sum, n) = dataset
        .records()
        .iter()
        .filter(|r| scope.is_none_or(|s| s.contains(&r.stratum)))
        .fold((0.0, 0u64), |(sum, n), r| (sum + r.value, n + 1));
    if n == 0 {
        return Err(Error::EmptyScope);
    }
    Ok(sum / n as f64)
}
