//! Variance-optimal sample size reduction.
//!
//! Given per-stratum weights `w_i = n_i sigma_i` and current sample sizes
//! `s_i`, choose new sizes `0 <= s'_i <= s_i` summing to a smaller target so
//! that `sum w_i^2 / s'_i` is minimal. The continuous optimum caps strata whose
//! sample is not oversized for the budget at their current size and gives the
//! rest their Neyman share of what remains.
//!
//! Strata with zero weight contribute nothing to the objective. They always
//! count as oversized (their Neyman share is zero) and are therefore emptied
//! first; if the positively weighted strata all keep their full sample, the
//! leftover budget is spread over the zero-weight strata in proportion to
//! their current size.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Allocation, Share, StratumId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionRow {
    pub stratum: StratumId,
    pub weight: f64,
    pub size: f64,
}

impl ReductionRow {
    pub fn new(stratum: impl Into<StratumId>, weight: f64, size: f64) -> Self {
        Self {
            stratum: stratum.into(),
            weight,
            size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionInstance {
    pub rows: Vec<ReductionRow>,
    pub target: f64,
}

impl ReductionInstance {
    pub fn new(rows: Vec<ReductionRow>, target: f64) -> Result<Self> {
        for r in &rows {
            if !(r.weight >= 0.0 && r.weight.is_finite()) || !(r.size >= 0.0 && r.size.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "stratum {}: weight and size must be finite and non-negative",
                    r.stratum
                )));
            }
        }
        if target.is_nan() || target < 0.0 {
            return Err(Error::InvalidInput(format!(
                "target must be non-negative, got {target}"
            )));
        }
        let total: f64 = rows.iter().map(|r| r.size).sum();
        if target > total * (1.0 + 1e-12) {
            return Err(Error::InfeasibleTarget { target, total });
        }
        Ok(Self { rows, target })
    }

    pub fn total_size(&self) -> f64 {
        self.rows.iter().map(|r| r.size).sum()
    }

    fn weights(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.weight).collect()
    }

    fn sizes(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.size).collect()
    }

    fn by_id(&self) -> impl Fn(usize, usize) -> Ordering + '_ {
        |a, b| self.rows[a].stratum.cmp(&self.rows[b].stratum)
    }

    fn to_allocation(&self, sizes: Vec<f64>) -> Allocation {
        let shares = self
            .rows
            .iter()
            .zip(sizes)
            .map(|(r, size)| Share {
                stratum: r.stratum.clone(),
                size,
                cap: r.size,
            })
            .collect();
        Allocation::new(shares, self.target)
    }
}

/// `sum w_i^2 / s'_i` over strata with positive weight; infinite when such a
/// stratum is left empty.
pub fn objective(weights: &[f64], sizes: &[f64]) -> f64 {
    weights
        .iter()
        .zip(sizes)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, s)| if *s > 0.0 { w * w / s } else { f64::INFINITY })
        .sum()
}

pub fn instance_objective(instance: &ReductionInstance, alloc: &Allocation) -> f64 {
    objective(&instance.weights(), &alloc.sizes())
}

/// The stratum to shrink by one element: smallest `w_i / s_i` among strata
/// holding at least one element. Ties go to the larger sample, then the lower id.
///
/// A stratum whose last element would go while it still has spread (`s_i = 1`,
/// `w_i > 0`) is picked only when nothing else is available.
pub fn single_ssr(instance: &ReductionInstance) -> Result<StratumId> {
    pick_single(&instance.weights(), &instance.sizes(), instance.by_id())
        .map(|i| instance.rows[i].stratum.clone())
        .ok_or(Error::NothingToEvict)
}

pub(crate) fn pick_single(weights: &[f64], sizes: &[f64], by_id: impl Fn(usize, usize) -> Ordering) -> Option<usize> {
    let last_resort = |i: usize| sizes[i] < 2.0 && weights[i] > 0.0;
    let better = |a: usize, b: usize| -> bool {
        match last_resort(a).cmp(&last_resort(b)) {
            Ordering::Less => return true,
            Ordering::Greater => return false,
            Ordering::Equal => {}
        }
        // w_a / s_a vs w_b / s_b without dividing, so equal ratios tie exactly.
        let lhs = weights[a] * sizes[b];
        let rhs = weights[b] * sizes[a];
        match lhs.partial_cmp(&rhs).unwrap_or(Ordering::Equal) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => match sizes[a].partial_cmp(&sizes[b]).unwrap_or(Ordering::Equal) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => by_id(a, b) == Ordering::Less,
            },
        }
    };
    let mut best: Option<usize> = None;
    for (i, _) in sizes.iter().enumerate().filter(|(_, s)| **s >= 1.0) {
        best = match best {
            Some(b) if !better(i, b) => Some(b),
            _ => Some(i),
        };
    }
    best
}

/// Recursive reduction: fix every stratum that is not oversized under the
/// current budget, then redo the split over the oversized ones with what is
/// left. When every stratum under consideration is oversized, each gets its
/// Neyman share.
pub fn ssr(instance: &ReductionInstance) -> Result<Allocation> {
    let weights = instance.weights();
    let sizes = instance.sizes();
    let mut out = vec![0.0; sizes.len()];
    let mut active: Vec<usize> = (0..sizes.len()).collect();
    let mut budget = instance.target.min(instance.total_size());

    // Each pass is one level of the recursion on the oversized set.
    loop {
        let total_weight: f64 = active.iter().map(|&j| weights[j]).sum();
        if total_weight <= 0.0 {
            split_by_size(&active, budget, &sizes, &mut out);
            break;
        }
        let mut oversized = Vec::with_capacity(active.len());
        let mut kept = 0.0;
        for &j in &active {
            let share = budget * weights[j] / total_weight;
            if sizes[j] > share {
                oversized.push(j);
            } else {
                out[j] = sizes[j];
                kept += sizes[j];
            }
        }
        if oversized.len() == active.len() {
            for &j in &active {
                out[j] = budget * weights[j] / total_weight;
            }
            break;
        }
        budget = (budget - kept).max(0.0);
        active = oversized;
    }
    Ok(instance.to_allocation(out))
}

/// Sort-based reduction with the same output as [`ssr`] in `O(r log r)`.
///
/// Positively weighted strata are sorted by `s_i / w_i`; the strata that are
/// not oversized always form a prefix of that order, so one walk with suffix
/// sums of the weights finds them.
pub fn fast_ssr(instance: &ReductionInstance) -> Result<Allocation> {
    let out = fast_ssr_sizes(
        &instance.weights(),
        &instance.sizes(),
        instance.target.min(instance.total_size()),
        instance.by_id(),
    );
    Ok(instance.to_allocation(out))
}

pub(crate) fn fast_ssr_sizes(
    weights: &[f64],
    sizes: &[f64],
    target: f64,
    by_id: impl Fn(usize, usize) -> Ordering,
) -> Vec<f64> {
    let mut out = vec![0.0; sizes.len()];
    let (mut queue, zeros): (Vec<usize>, Vec<usize>) = (0..sizes.len()).partition(|&i| weights[i] > 0.0);
    let z: Vec<f64> = (0..sizes.len())
        .map(|i| {
            if weights[i] > 0.0 {
                sizes[i] / weights[i]
            } else {
                f64::INFINITY
            }
        })
        .collect();
    queue.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then_with(|| by_id(a, b)));

    let len = queue.len();
    let mut suffix = vec![0.0; len + 1];
    for k in (0..len).rev() {
        suffix[k] = suffix[k + 1] + weights[queue[k]];
    }

    let mut budget = target;
    let mut residual = target;
    let mut denom = suffix.first().copied().unwrap_or(0.0);
    let mut i = 0;
    while i < len {
        let q = queue[i];
        if sizes[q] > budget * weights[q] / denom {
            break;
        }
        out[q] = sizes[q];
        residual -= sizes[q];
        if i + 1 < len {
            let next = queue[i + 1];
            if sizes[next] > budget * weights[next] / denom {
                budget = residual.max(0.0);
                denom = suffix[i + 1];
            }
        }
        i += 1;
    }

    if i < len {
        for &q in &queue[i..] {
            out[q] = budget * weights[q] / denom;
        }
    } else {
        split_by_size(&zeros, residual.max(0.0), sizes, &mut out);
    }
    out
}

fn split_by_size(strata: &[usize], budget: f64, sizes: &[f64], out: &mut [f64]) {
    let total: f64 = strata.iter().map(|&j| sizes[j]).sum();
    for &j in strata {
        out[j] = if total > 0.0 { budget * sizes[j] / total } else { 0.0 };
    }
}

/// Rounds a continuous reduction to whole records with minimal objective.
///
/// Starts from the floor of every entry and adds the missing units one at a
/// time where `w^2 / (x (x + 1))`, the drop in objective, is largest (an empty
/// positively weighted stratum first). Ties go to the lower id.
pub fn integerize_reduction(instance: &ReductionInstance, alloc: &Allocation) -> Allocation {
    let sizes = round_min_objective(
        &instance.weights(),
        &instance.sizes(),
        &alloc.sizes(),
        instance.target,
        instance.by_id(),
    );
    instance.to_allocation(sizes)
}

/// Integer sizes minimizing `sum w^2 / x` with `x <= floor(cap)` summing to
/// `floor(target)`, started from the floor of `real`.
///
/// Greedy filling from the floor is not enough on its own: when `real` leaves a
/// weighted stratum below one, the optimum may need to take units back from a
/// large stratum. The objective is separable and convex, so once no single-unit
/// exchange improves it the point is optimal.
pub(crate) fn round_min_objective(
    weights: &[f64],
    caps: &[f64],
    real: &[f64],
    target: f64,
    by_id: impl Fn(usize, usize) -> Ordering,
) -> Vec<f64> {
    let r = weights.len();
    let caps: Vec<f64> = caps.iter().map(|c| c.max(0.0).floor()).collect();
    let mut sizes: Vec<f64> = real
        .iter()
        .zip(&caps)
        .map(|(x, cap)| (x + 1e-9).floor().clamp(0.0, *cap))
        .collect();
    let goal = (target + 1e-6).floor().min(caps.iter().sum());
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| by_id(a, b));
    let mut rank = vec![0usize; r];
    for (k, &i) in order.iter().enumerate() {
        rank[i] = k;
    }

    let gain = |i: usize, x: f64| {
        let w = weights[i];
        if w <= 0.0 {
            0.0
        } else if x <= 0.0 {
            f64::INFINITY
        } else {
            w * w / (x * (x + 1.0))
        }
    };
    let loss = |i: usize, x: f64| gain(i, x - 1.0);

    // Max-heap of (gain, lower id first); entries go stale when sizes change.
    let mut grow: BinaryHeap<(HeapF64, Reverse<usize>, usize)> = BinaryHeap::new();
    // Max-heap of (-loss, lower id first) for strata that can give a unit back.
    let mut shrink: BinaryHeap<(HeapF64, Reverse<usize>, usize)> = BinaryHeap::new();
    let push = |grow: &mut BinaryHeap<_>, shrink: &mut BinaryHeap<_>, sizes: &[f64], i: usize| {
        if sizes[i] + 1.0 <= caps[i] {
            grow.push((HeapF64(gain(i, sizes[i])), Reverse(rank[i]), i));
        }
        if sizes[i] >= 1.0 {
            shrink.push((HeapF64(-loss(i, sizes[i])), Reverse(rank[i]), i));
        }
    };
    for i in 0..r {
        push(&mut grow, &mut shrink, &sizes, i);
    }
    let fresh_grow = |e: &(HeapF64, Reverse<usize>, usize), sizes: &[f64]| {
        sizes[e.2] + 1.0 <= caps[e.2] && e.0 .0 == gain(e.2, sizes[e.2])
    };
    let fresh_shrink =
        |e: &(HeapF64, Reverse<usize>, usize), sizes: &[f64]| sizes[e.2] >= 1.0 && -e.0 .0 == loss(e.2, sizes[e.2]);

    let mut remaining = (goal - sizes.iter().sum::<f64>()).round() as i64;
    while remaining > 0 {
        let Some(top) = grow.pop() else { break };
        if !fresh_grow(&top, &sizes) {
            continue;
        }
        sizes[top.2] += 1.0;
        remaining -= 1;
        push(&mut grow, &mut shrink, &sizes, top.2);
    }
    while remaining < 0 {
        let Some(top) = shrink.pop() else { break };
        if !fresh_shrink(&top, &sizes) {
            continue;
        }
        sizes[top.2] -= 1.0;
        remaining += 1;
        push(&mut grow, &mut shrink, &sizes, top.2);
    }

    loop {
        while grow.peek().is_some_and(|e| !fresh_grow(e, &sizes)) {
            grow.pop();
        }
        while shrink.peek().is_some_and(|e| !fresh_shrink(e, &sizes)) {
            shrink.pop();
        }
        let (Some(g), Some(s)) = (grow.peek(), shrink.peek()) else {
            break;
        };
        let (i, up) = (g.2, g.0 .0);
        let mut donor = Some((s.2, -s.0 .0));
        if donor.is_some_and(|(j, _)| j == i) {
            // The best receiver is also the cheapest donor; use the runner-up.
            let held = shrink.pop().unwrap();
            while shrink.peek().is_some_and(|e| !fresh_shrink(e, &sizes)) {
                shrink.pop();
            }
            donor = shrink.peek().map(|e| (e.2, -e.0 .0));
            shrink.push(held);
        }
        match donor {
            Some((j, down)) if up > down * (1.0 + 1e-12) => {
                sizes[i] += 1.0;
                sizes[j] -= 1.0;
                push(&mut grow, &mut shrink, &sizes, i);
                push(&mut grow, &mut shrink, &sizes, j);
            }
            _ => break,
        }
    }
    sizes
}

#[derive(Clone, Copy, PartialEq)]
struct HeapF64(f64);

impl Eq for HeapF64 {}

impl PartialOrd for HeapF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Exhaustive search over integer reductions; a test oracle for tiny instances.
pub fn brute_force_reduction(instance: &ReductionInstance) -> Result<Allocation> {
    let r = instance.rows.len();
    let total = instance.total_size();
    if r > 5 || total > 20.0 {
        return Err(Error::InstanceTooLarge(format!(
            "{r} strata with {total} elements (limit 5 strata, 20 elements)"
        )));
    }
    let integral = |x: f64| x.fract() == 0.0;
    if !instance.rows.iter().all(|row| integral(row.size)) || !integral(instance.target) {
        return Err(Error::InvalidInput(
            "exhaustive search needs integer sizes and target".into(),
        ));
    }
    let weights = instance.weights();
    let caps: Vec<u32> = instance.rows.iter().map(|row| row.size as u32).collect();
    let target = instance.target as u32;

    let mut current = vec![0u32; r];
    let mut best: Option<(f64, Vec<u32>)> = None;
    enumerate(0, target, &caps, &mut current, &mut |v| {
        let sizes: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        let obj = objective(&weights, &sizes);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, v.to_vec()));
        }
    });
    let (_, sizes) = best.expect("target <= total guarantees a feasible vector");
    Ok(instance.to_allocation(sizes.into_iter().map(f64::from).collect()))
}

fn enumerate(i: usize, left: u32, caps: &[u32], current: &mut [u32], visit: &mut impl FnMut(&[u32])) {
    if i == caps.len() {
        if left == 0 {
            visit(current);
        }
        return;
    }
    let rest: u32 = caps[i + 1..].iter().sum();
    let lo = left.saturating_sub(rest);
    for x in lo..=caps[i].min(left) {
        current[i] = x;
        enumerate(i + 1, left - x, caps, current, visit);
    }
    current[i] = 0;
}

/// First-order optimality certificate for the continuous reduction program.
///
/// True iff the allocation is feasible and some multiplier `lambda` makes
/// every partially reduced stratum satisfy `w_i / s'_i = lambda`, every
/// untouched stratum satisfy `w_i / s_i >= lambda` (it would take more if it
/// could), and only zero-weight strata are emptied. Comparisons are relative
/// to `max(1, lambda)`.
pub fn kkt_check(instance: &ReductionInstance, alloc: &Allocation, tol: f64) -> bool {
    if alloc.len() != instance.rows.len() {
        return false;
    }
    let sizes = alloc.sizes();
    let scale = instance.target.abs().max(1.0);
    if (alloc.total() - instance.target).abs() > tol * scale {
        return false;
    }

    let mut interior = Vec::new();
    let mut capped = Vec::new();
    for (row, &x) in instance.rows.iter().zip(&sizes) {
        if x < -tol || x > row.size + tol * row.size.max(1.0) {
            return false;
        }
        if row.size == 0.0 {
            continue;
        }
        if (x - row.size).abs() <= tol * row.size.max(1.0) {
            capped.push(row.weight / row.size);
        } else if x <= tol {
            if row.weight > tol {
                return false;
            }
        } else {
            interior.push(row.weight / x);
        }
    }

    let Some(lambda) = interior.iter().copied().reduce(f64::max) else {
        return true;
    };
    let lo = interior.iter().copied().fold(f64::INFINITY, f64::min);
    let slack = tol * lambda.max(1.0);
    if lambda - lo > slack {
        return false;
    }
    capped.iter().all(|&ratio| ratio >= lo - slack)
}
