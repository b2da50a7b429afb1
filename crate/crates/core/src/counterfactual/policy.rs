//! Cost-cut policies.
//!
//! A relative cut `r` on the intensive margin scales a child's per-year cost,
//! `alpha <- alpha (1 - r)`. On the extensive margin it moves the
//! one-child threshold: the baseline probability is mapped to its implied
//! threshold and cost gap at a reference budget, the cut is applied to the
//! chosen (or, for the firstborn cut in a firstborn-son household, the other)
//! child's cost, and the new threshold is mapped back to a probability
//! through the ability law.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{costgap_from_threshold, threshold_from_costgap, threshold_from_p, Theta};
use crate::population::AbilityDist;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    #[serde(default)]
    pub firstborn_cost_cut_ext: f64,
    #[serde(default)]
    pub firstborn_cost_cut_int: f64,
    /// Cuts for a daughter with brothers, by her position: `[firstborn, later-born]`.
    #[serde(default)]
    pub daughter_cost_cut_ext: [f64; 2],
    #[serde(default)]
    pub daughter_cost_cut_int: [f64; 2],
    /// Replace the selection probabilities with their no-disadvantage values
    /// instead of applying the extensive cuts.
    #[serde(default)]
    pub extensive_fix: bool,
}

/// Selection probabilities and cost multipliers after a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedPolicy {
    pub theta: Theta,
    pub firstborn_mult: f64,
    pub daughter_mult: [f64; 2],
    pub q_ref: f64,
}

impl ResolvedPolicy {
    /// Intensive-margin cost multiplier for each child.
    pub fn alpha_multipliers(&self, female: &[bool]) -> Vec<f64> {
        let has_brother = female.iter().any(|&f| !f);
        female
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                let mut m = 1.0;
                if i == 0 {
                    m *= self.firstborn_mult;
                }
                if f && has_brother {
                    m *= self.daughter_mult[(i > 0) as usize];
                }
                m
            })
            .collect()
    }
}

fn check_cut(name: &str, r: f64) -> Result<()> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{r} is not a relative reduction in [0, 1]")))
    }
}

/// One-child threshold problem at the reference budget.
struct Choice {
    delta_chosen: f64,
    delta_other: f64,
    /// Cost of the chosen and the other child before any cut.
    alpha_chosen: f64,
    alpha_other: f64,
}

impl Choice {
    fn new(p: f64, delta_chosen: f64, delta_other: f64, theta: &Theta, q_ref: f64, dist: &AbilityDist) -> Result<Choice> {
        let t0 = threshold_from_p(p, dist)?;
        let gap = costgap_from_threshold(t0, q_ref, delta_chosen, delta_other);
        Ok(Choice {
            delta_chosen,
            delta_other,
            alpha_chosen: theta.alpha_base + gap,
            alpha_other: theta.alpha_base,
        })
    }

    fn p_after(&self, mult_chosen: f64, mult_other: f64, q_ref: f64, dist: &AbilityDist) -> f64 {
        let gap = self.alpha_chosen * mult_chosen - self.alpha_other * mult_other;
        let t = threshold_from_costgap(gap, q_ref, self.delta_chosen, self.delta_other);
        1.0 - dist.cdf(t)
    }

    /// Cut on the chosen child's cost that moves `p` to `target`.
    fn cut_for(&self, target: f64, mult_chosen: f64, mult_other: f64, q_ref: f64, dist: &AbilityDist) -> Result<f64> {
        let t = threshold_from_p(target, dist)?;
        let gap = costgap_from_threshold(t, q_ref, self.delta_chosen, self.delta_other);
        let r = 1.0 - (gap + self.alpha_other * mult_other) / (self.alpha_chosen * mult_chosen);
        Ok(r.clamp(0.0, 1.0))
    }
}

impl PolicySpec {
    /// Cut magnitudes reported for the reference application (percent of
    /// cost, there measured against a different cost normalisation).
    pub fn reference() -> Self {
        PolicySpec {
            firstborn_cost_cut_ext: 0.019,
            firstborn_cost_cut_int: 0.0018,
            daughter_cost_cut_ext: [0.03, 0.038],
            daughter_cost_cut_int: [0.013, 0.013],
            extensive_fix: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_cut("firstborn_cost_cut_ext", self.firstborn_cost_cut_ext)?;
        check_cut("firstborn_cost_cut_int", self.firstborn_cost_cut_int)?;
        for k in 0..2 {
            check_cut("daughter_cost_cut_ext", self.daughter_cost_cut_ext[k])?;
            check_cut("daughter_cost_cut_int", self.daughter_cost_cut_int[k])?;
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.firstborn_cost_cut_ext == 0.0
            && self.firstborn_cost_cut_int == 0.0
            && self.daughter_cost_cut_ext == [0.0; 2]
            && self.daughter_cost_cut_int == [0.0; 2]
            && !self.extensive_fix
    }

    /// Cuts that remove the disadvantages at budget `q_ref`.
    ///
    /// Intensive: the firstborn cut removes the birth-order cost gap; the
    /// daughter cut equalises a daughter's and a son's marginal utility at an
    /// equal split of `q_ref` with equal abilities. Extensive: the firstborn
    /// cut brings `p1` to one half, then the daughter cuts bring `p_fb_d` and
    /// `p_sb_d` to one half given the firstborn cut.
    pub fn calibrated(theta: &Theta, q_ref: f64, dist: &AbilityDist) -> Result<Self> {
        theta.validate()?;
        if !(q_ref > 0.0) {
            return Err(Error::NonPositiveBudget(q_ref));
        }
        let g = theta.gamma;
        let dd = g - theta.theta1;
        let base = theta.alpha_base;
        let fb_int = theta.alpha_gap / (base + theta.alpha_gap);
        let x = q_ref / 2.0;
        let d_int = if base > 0.0 {
            (0.5 * (g * x.powf(g - 1.0) - dd * x.powf(dd - 1.0)) / base).clamp(0.0, 1.0)
        } else {
            0.0
        };

        let same = Choice::new(theta.p1, g, g, theta, q_ref, dist)?;
        let fb_ext = same.cut_for(0.5, 1.0, 1.0, q_ref, dist)?;
        let ds = Choice::new(theta.p_fb_d, dd, g, theta, q_ref, dist)?;
        let d0 = ds.cut_for(0.5, 1.0 - fb_ext, 1.0, q_ref, dist)?;
        let sd = Choice::new(theta.p_sb_d, dd, g, theta, q_ref, dist)?;
        let d1 = sd.cut_for(0.5, 1.0, 1.0 - fb_ext, q_ref, dist)?;
        Ok(PolicySpec {
            firstborn_cost_cut_ext: fb_ext,
            firstborn_cost_cut_int: fb_int,
            daughter_cost_cut_ext: [d0, d1],
            daughter_cost_cut_int: [d_int, d_int],
            extensive_fix: false,
        })
    }

    /// Apply to `theta` at reference budget `q_ref`.
    pub fn resolve(&self, theta: &Theta, q_ref: f64, dist: &AbilityDist) -> Result<ResolvedPolicy> {
        self.validate()?;
        let mut t = theta.clone();
        if self.extensive_fix {
            t.p1 = 0.5;
            t.p_fb_d = 0.5;
            t.p_sb_d = 0.5;
        } else {
            let fb = 1.0 - self.firstborn_cost_cut_ext;
            let [d0, d1] = self.daughter_cost_cut_ext.map(|r| 1.0 - r);
            let (g, dd) = (theta.gamma, theta.gamma - theta.theta1);
            // untouched probabilities are copied, not recomputed
            if fb != 1.0 {
                t.p1 = Choice::new(theta.p1, g, g, theta, q_ref, dist)?.p_after(fb, 1.0, q_ref, dist);
            }
            if fb * d0 != 1.0 {
                t.p_fb_d = Choice::new(theta.p_fb_d, dd, g, theta, q_ref, dist)?.p_after(fb * d0, 1.0, q_ref, dist);
            }
            if fb != 1.0 || d1 != 1.0 {
                t.p_sb_d = Choice::new(theta.p_sb_d, dd, g, theta, q_ref, dist)?.p_after(d1, fb, q_ref, dist);
            }
        }
        Ok(ResolvedPolicy {
            theta: t,
            firstborn_mult: 1.0 - self.firstborn_cost_cut_int,
            daughter_mult: self.daughter_cost_cut_int.map(|r| 1.0 - r),
            q_ref,
        })
    }
}
