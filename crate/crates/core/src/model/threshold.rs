//! Threshold algebra for the one-child extensive choice.
//!
//! A low-aversion two-child household gives the whole budget to one child.
//! With `a_other = 1 - a_chosen` it picks `chosen` when
//! `a_chosen > (gap * q_T + q_T^d_other) / (q_T^d_chosen + q_T^d_other)`,
//! where `gap = alpha_chosen - alpha_other`. The resulting selection
//! probability is the upper tail of the ability law at that threshold.

use crate::error::{Error, Result};
use crate::population::AbilityDist;

/// Ability cutoff above which `chosen` is the educated child.
pub fn threshold_from_costgap(alpha_gap: f64, q_total: f64, delta_chosen: f64, delta_other: f64) -> f64 {
    let pc = q_total.powf(delta_chosen);
    let po = q_total.powf(delta_other);
    (alpha_gap * q_total + po) / (pc + po)
}

/// Inverse of [`threshold_from_costgap`] in the cost gap.
pub fn costgap_from_threshold(threshold: f64, q_total: f64, delta_chosen: f64, delta_other: f64) -> f64 {
    let pc = q_total.powf(delta_chosen);
    let po = q_total.powf(delta_other);
    (threshold * (pc + po) - po) / q_total
}

/// `1 - G(threshold)`.
pub fn p_from_threshold(threshold: f64, dist: &AbilityDist) -> Result<f64> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("threshold", format!("{threshold} is outside (0, 1)")));
    }
    Ok(1.0 - dist.cdf(threshold))
}

/// Threshold whose upper tail has mass `p`.
pub fn threshold_from_p(p: f64, dist: &AbilityDist) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid("p", format!("{p} is outside (0, 1)")));
    }
    Ok(dist.quantile(1.0 - p))
}
