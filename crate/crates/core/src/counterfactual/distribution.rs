//! Empirical distributions of within-household gaps and their comparison.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{ks_statistic_sorted, sorted};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapDistribution {
    pub scenario: String,
    /// Ascending.
    pub samples: Vec<f64>,
}

impl GapDistribution {
    pub fn new(scenario: impl Into<String>, samples: &[f64]) -> Self {
        GapDistribution {
            scenario: scenario.into(),
            samples: sorted(samples),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        crate::stats::mean(&self.samples)
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        if self.len() < 2 {
            return f64::NAN;
        }
        (crate::stats::sample_variance(&self.samples) / self.len() as f64).sqrt()
    }

    /// `F(x)`, the share of samples `<= x`.
    pub fn ecdf(&self, x: f64) -> f64 {
        self.samples.partition_point(|&s| s <= x) as f64 / self.len() as f64
    }

    fn check(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::InsufficientData(format!("gap distribution `{}` is empty", self.scenario)))
        } else {
            Ok(())
        }
    }

    /// The distribution of `-gap`.
    pub fn reflected(&self) -> GapDistribution {
        GapDistribution {
            scenario: format!("{}_reflected", self.scenario),
            samples: self.samples.iter().rev().map(|x| -x).collect(),
        }
    }
}

/// `sup_x |F1(x) - F2(x)|`.
pub fn ks_distance(d1: &GapDistribution, d2: &GapDistribution) -> Result<f64> {
    d1.check()?;
    d2.check()?;
    Ok(ks_statistic_sorted(&d1.samples, &d2.samples))
}

/// `sup_x (F_dom(x) - F_other(x))`, floored at zero. Zero means `dom`
/// first-order dominates `other` on the sample.
pub fn dominance_violation(dom: &GapDistribution, other: &GapDistribution) -> Result<f64> {
    dom.check()?;
    other.check()?;
    let mut worst = 0.0_f64;
    for &x in dom.samples.iter().chain(&other.samples) {
        worst = worst.max(dom.ecdf(x) - other.ecdf(x));
    }
    Ok(worst)
}

/// Distance between the distribution and its reflection about zero, the
/// left-limit-consistent form of `sup_x |F(x) + F(-x) - 1|`.
pub fn symmetry_defect(d: &GapDistribution) -> Result<f64> {
    ks_distance(d, &d.reflected())
}
