//! Intensive-margin allocation by bisection on first-order conditions.
//!
//! With two educated children the budget binds and the problem is
//! one-dimensional. It is parametrised by the deviation `d` from an equal
//! split, `q = (c + d, c - d)`, so that swapping two identical-cost children
//! negates every bisection midpoint and the solution swaps exactly. With three
//! educated children an outer bisection over the first child's years wraps the
//! two-child solve, using the envelope theorem for the inner value's slope.

use super::{child_params, Allocation, ChildParams, HouseholdSpec, Theta};
use crate::error::{Error, Result};

pub const BISECTION_TOL: f64 = 1e-10;
pub const BISECTION_MAX_ITER: usize = 200;

/// Bisection for the root of a strictly decreasing `f` on `[lo, hi]`, with the
/// corners handled by the caller.
fn bisect_decreasing(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (lo, hi);
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..BISECTION_MAX_ITER {
        mid = 0.5 * (lo + hi);
        let g = f(mid);
        if g == 0.0 {
            return mid;
        }
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= BISECTION_TOL {
            return 0.5 * (lo + hi);
        }
    }
    mid
}

/// Optimal split of `budget` between two educated children.
pub(crate) fn solve_pair(c1: &ChildParams, c2: &ChildParams, budget: f64, q_max: f64) -> (f64, f64) {
    let budget = budget.min(2.0 * q_max);
    let center = 0.5 * budget;
    let half = center.min(q_max - center);
    if half <= 0.0 {
        return (center, center);
    }
    let foc = |d: f64| c1.marginal(center + d) - c2.marginal(center - d);
    if foc(half) >= 0.0 {
        return (center + half, center - half);
    }
    if foc(-half) <= 0.0 {
        return (center - half, center + half);
    }
    let d = bisect_decreasing(-half, half, foc);
    (center + d, center - d)
}

/// Slope of the best two-child value at the pair's solution: the marginal
/// utility of a child that can still absorb years.
fn pair_slope(c2: &ChildParams, c3: &ChildParams, q2: f64, q3: f64, q_max: f64) -> f64 {
    let free2 = q2 < q_max;
    let free3 = q3 < q_max;
    match (free2, free3) {
        (true, true) => 0.5 * (c2.marginal(q2) + c3.marginal(q3)),
        (true, false) => c2.marginal(q2),
        (false, true) => c3.marginal(q3),
        (false, false) => c2.marginal(q2).min(c3.marginal(q3)),
    }
}

pub(crate) fn solve_triple(c: [&ChildParams; 3], budget: f64, q_max: f64) -> [f64; 3] {
    let budget = budget.min(3.0 * q_max);
    let lo = (budget - 2.0 * q_max).max(0.0);
    let hi = budget.min(q_max);
    let inner = |q1: f64| solve_pair(c[1], c[2], budget - q1, q_max);
    let foc = |q1: f64| {
        let (q2, q3) = inner(q1);
        c[0].marginal(q1) - pair_slope(c[1], c[2], q2, q3, q_max)
    };
    let q1 = if hi - lo <= 0.0 {
        lo
    } else if foc(hi) >= 0.0 {
        hi
    } else if foc(lo) <= 0.0 {
        lo
    } else {
        bisect_decreasing(lo, hi, foc)
    };
    let (q2, q3) = inner(q1);
    [q1, q2, q3]
}

/// Solve the allocation for explicit child primitives.
pub fn solve_with_params(
    params: &[ChildParams],
    educated: &[bool],
    q_total: f64,
    q_max: f64,
) -> Result<Vec<f64>> {
    if params.len() != educated.len() {
        return Err(Error::invalid("educated_mask", "length differs from number of children"));
    }
    if !(q_total > 0.0) {
        return Err(Error::NonPositiveBudget(q_total));
    }
    let idx: Vec<usize> = (0..educated.len()).filter(|&i| educated[i]).collect();
    let mut q = vec![0.0; params.len()];
    match idx.as_slice() {
        [] => return Err(Error::NoEducatedChildren),
        [i] => q[*i] = q_total.min(q_max),
        [i, j] => {
            let (a, b) = solve_pair(&params[*i], &params[*j], q_total, q_max);
            q[*i] = a;
            q[*j] = b;
        }
        [i, j, k] => {
            let s = solve_triple([&params[*i], &params[*j], &params[*k]], q_total, q_max);
            q[*i] = s[0];
            q[*j] = s[1];
            q[*k] = s[2];
        }
        _ => return Err(Error::UnsupportedFamilySize(params.len())),
    }
    Ok(q)
}

/// Utility-maximising allocation of `hh.q_total` over the educated children.
pub fn solve_allocation(hh: &HouseholdSpec, theta: &Theta, educated: &[bool]) -> Result<Allocation> {
    let params = child_params(hh, theta);
    let q = solve_with_params(&params, educated, hh.q_total, hh.q_max)?;
    Ok(Allocation {
        q,
        educated_mask: educated.to_vec(),
    })
}
