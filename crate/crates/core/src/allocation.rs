//! Closed-form allocation rules and allocation-vector utilities.
//!
//! `neyman` ignores stratum sizes entirely and may allot more to a stratum
//! than it holds. `neyman_plus` and `uniform_redistribute` cap bounded strata
//! and hand the surplus out in equal shares, round after round, until nothing
//! exceeds its cap.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Allocation, Share, StratumSummary};

/// Per-stratum sizes and spreads plus the total budget `M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationInput {
    pub strata: Vec<StratumSummary>,
    pub budget: u64,
}

impl AllocationInput {
    pub fn new(strata: Vec<StratumSummary>, budget: u64) -> Result<Self> {
        if strata.is_empty() {
            return Err(Error::InvalidInput("no strata".into()));
        }
        if let Some(bad) = strata.iter().find(|s| !(s.sigma >= 0.0 && s.sigma.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "stratum {}: sigma must be finite and non-negative, got {}",
                bad.stratum, bad.sigma
            )));
        }
        Ok(Self { strata, budget })
    }

    pub fn population(&self) -> u64 {
        self.strata.iter().map(|s| s.count).sum()
    }

    fn shares_with(&self, sizes: impl IntoIterator<Item = f64>) -> Allocation {
        let shares = self
            .strata
            .iter()
            .zip(sizes)
            .map(|(s, size)| Share {
                stratum: s.stratum.clone(),
                size,
                cap: s.count as f64,
            })
            .collect();
        Allocation::new(shares, self.budget as f64)
    }
}

/// The allocation rules an offline sampler can be configured with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Voila,
    Neyman,
    NeymanPlus,
    Proportional,
    Uniform,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Voila => "voila",
            Policy::Neyman => "neyman",
            Policy::NeymanPlus => "neyman_plus",
            Policy::Proportional => "proportional",
            Policy::Uniform => "uniform",
        })
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "voila" => Ok(Policy::Voila),
            "neyman" => Ok(Policy::Neyman),
            "neyman_plus" | "neyman-plus" | "neyman+" => Ok(Policy::NeymanPlus),
            "proportional" => Ok(Policy::Proportional),
            "uniform" | "ssunif" => Ok(Policy::Uniform),
            other => Err(Error::InvalidInput(format!("unknown policy `{other}`"))),
        }
    }
}

/// `M * n_i sigma_i / sum_j n_j sigma_j`, unbounded by `n_i`.
pub fn neyman(input: &AllocationInput) -> Result<Allocation> {
    let total: f64 = input.strata.iter().map(StratumSummary::weight).sum();
    if total <= 0.0 {
        return Err(Error::AllZeroWeights);
    }
    let m = input.budget as f64;
    Ok(input.shares_with(input.strata.iter().map(|s| m * s.weight() / total)))
}

/// Neyman, then cap bounded strata at `n_i` and split the freed memory
/// equally among the rest, repeating until no stratum is over its cap.
pub fn neyman_plus(input: &AllocationInput) -> Result<Allocation> {
    if input.population() <= input.budget {
        return Ok(input.shares_with(input.strata.iter().map(|s| s.count as f64)));
    }
    let start = neyman(input)?.sizes();
    let caps: Vec<f64> = input.strata.iter().map(|s| s.count as f64).collect();
    Ok(input.shares_with(redistribute_equally(start, &caps)))
}

/// `M * n_i / n`.
pub fn proportional(input: &AllocationInput) -> Result<Allocation> {
    let n = input.population();
    if n == 0 {
        return Err(Error::EmptyPopulation);
    }
    let m = input.budget as f64;
    Ok(input.shares_with(input.strata.iter().map(|s| m * s.count as f64 / n as f64)))
}

/// `M / r` to every stratum, with the surplus of bounded strata re-split
/// equally among the others until a fixpoint.
pub fn uniform_redistribute(input: &AllocationInput) -> Allocation {
    let caps: Vec<f64> = input.strata.iter().map(|s| s.count as f64).collect();
    let r = input.strata.len() as f64;
    let start = vec![input.budget as f64 / r; input.strata.len()];
    if input.population() <= input.budget {
        return input.shares_with(caps);
    }
    input.shares_with(redistribute_equally(start, &caps))
}

/// Caps every entry and adds the clipped excess in equal parts to entries
/// still below their cap. Each round caps at least one more entry, so this
/// ends within `entries.len()` rounds.
fn redistribute_equally(mut entries: Vec<f64>, caps: &[f64]) -> Vec<f64> {
    for _ in 0..=entries.len() {
        let mut excess = 0.0;
        for (e, &cap) in entries.iter_mut().zip(caps) {
            if *e > cap {
                excess += *e - cap;
                *e = cap;
            }
        }
        if excess <= 0.0 {
            break;
        }
        let open: Vec<usize> = (0..entries.len()).filter(|&i| entries[i] < caps[i]).collect();
        if open.is_empty() {
            break;
        }
        let bonus = excess / open.len() as f64;
        for i in open {
            entries[i] += bonus;
        }
    }
    entries
}

/// Largest-remainder rounding.
///
/// Floors every entry, then hands the remaining units one at a time to the
/// entries with the largest fractional parts (ties in `StratumId` order),
/// skipping entries already at their cap. The integer total is the real total
/// rounded down (tolerating 1e-6 of float noise), never more than the budget.
pub fn integerize(alloc: &Allocation) -> Result<Allocation> {
    let shares = alloc.shares();
    for s in shares {
        if s.size > s.cap + 1e-9 {
            return Err(Error::InfeasibleBudget {
                requested: s.size,
                available: s.cap,
            });
        }
    }
    let total = alloc.total();
    let target = (total + 1e-6).floor().min((alloc.budget() + 1e-6).floor());
    let capacity: f64 = shares.iter().map(|s| s.cap.floor()).sum();
    if capacity < target {
        return Err(Error::InfeasibleBudget {
            requested: target,
            available: capacity,
        });
    }

    let mut sizes: Vec<f64> = shares.iter().map(|s| s.size.max(0.0).floor()).collect();
    let mut remaining = (target - sizes.iter().sum::<f64>()).round() as i64;
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a].size - shares[a].size.floor();
        let fb = shares[b].size - shares[b].size.floor();
        fb.partial_cmp(&fa)
            .unwrap_or(Ordering::Equal)
            .then_with(|| shares[a].stratum.cmp(&shares[b].stratum))
    });
    while remaining > 0 {
        let mut progressed = false;
        for &i in &order {
            if remaining == 0 {
                break;
            }
            if sizes[i] + 1.0 <= shares[i].cap.floor() {
                sizes[i] += 1.0;
                remaining -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    let shares = shares
        .iter()
        .zip(sizes)
        .map(|(s, size)| Share { size, ..s.clone() })
        .collect();
    Ok(Allocation::new(shares, alloc.budget()))
}

/// `1 - a.b / (|a| |b|)` over the union of strata, which must coincide.
pub fn cosine_distance(a: &Allocation, b: &Allocation) -> Result<f64> {
    let (a, b) = (a.sorted(), b.sorted());
    if a.len() != b.len() || a.shares().iter().zip(b.shares()).any(|(x, y)| x.stratum != y.stratum) {
        return Err(Error::MismatchedStrata);
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.shares().iter().zip(b.shares()) {
        dot += x.size * y.size;
        na += x.size * x.size;
        nb += y.size * y.size;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 1.0))
}
