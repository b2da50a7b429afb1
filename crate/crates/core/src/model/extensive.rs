//! Extensive margin: which children receive any schooling.
//!
//! Two-child households are high aversion (educate both) with probability
//! `p_high_aversion`; otherwise one child is educated, picked by a
//! composition-specific Bernoulli. Three-child households have high, medium
//! (two educated) and low (one educated) aversion, and the educated subset is
//! picked by the sequential draws below. Every draw consumes the same four
//! uniforms whatever the outcome, so scenarios that share a stream also share
//! their random numbers.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_family_size, composition_code, params_for, Composition, HouseholdSpec, Theta};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aversion {
    High,
    Medium,
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensiveDraw {
    pub aversion: Aversion,
    pub educated: Vec<bool>,
}

/// Sequential selection probabilities for three-child households.
///
/// Medium aversion: child 1 is in the educated pair with probability
/// `medium[0]`; if so, child 2 joins with probability `medium[1]`, else
/// child 3 does. If child 1 is out, children 2 and 3 are educated.
/// Low aversion: child 1 is the educated child with probability `low[0]`;
/// otherwise child 2 with probability `low[1]`; otherwise child 3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionProbs {
    pub medium: [f64; 2],
    pub low: [f64; 2],
}

impl Default for SelectionProbs {
    /// Every child equally likely to be in the educated subset.
    fn default() -> Self {
        SelectionProbs {
            medium: [2.0 / 3.0, 0.5],
            low: [1.0 / 3.0, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreeChildExtensive {
    /// Probability of medium aversion given not high aversion.
    pub p_medium: f64,
    #[serde(default)]
    pub same_gender: SelectionProbs,
    #[serde(default)]
    pub mixed: SelectionProbs,
    /// Overrides keyed by composition code (e.g. `"dss"`).
    #[serde(default)]
    pub by_composition: BTreeMap<String, SelectionProbs>,
}

impl Default for ThreeChildExtensive {
    fn default() -> Self {
        ThreeChildExtensive {
            p_medium: 0.5,
            same_gender: SelectionProbs::default(),
            mixed: SelectionProbs::default(),
            by_composition: BTreeMap::new(),
        }
    }
}

impl ThreeChildExtensive {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, p: &SelectionProbs| -> Result<()> {
            for v in p.medium.iter().chain(p.low.iter()) {
                if !(0.0..=1.0).contains(v) {
                    return Err(Error::invalid(
                        format!("three_child.{name}"),
                        format!("{v} is not a probability"),
                    ));
                }
            }
            Ok(())
        };
        if !(0.0..=1.0).contains(&self.p_medium) {
            return Err(Error::invalid("three_child.p_medium", "not a probability"));
        }
        check("same_gender", &self.same_gender)?;
        check("mixed", &self.mixed)?;
        for (code, p) in &self.by_composition {
            if code.len() != 3 || !code.chars().all(|c| c == 'd' || c == 's') {
                return Err(Error::invalid(
                    "three_child.by_composition",
                    format!("`{code}` is not a three-letter d/s code"),
                ));
            }
            check(code, p)?;
        }
        Ok(())
    }

    pub fn probs_for(&self, female: &[bool]) -> SelectionProbs {
        if let Some(p) = self.by_composition.get(&composition_code(female)) {
            return *p;
        }
        if Composition::from_genders(female).is_same_gender() {
            self.same_gender
        } else {
            self.mixed
        }
    }
}

/// The uniforms consumed by one extensive-margin draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtensiveUniforms(pub [f64; 4]);

impl ExtensiveUniforms {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        ExtensiveUniforms([rng.random(), rng.random(), rng.random(), rng.random()])
    }
}

/// Selection probability for the low-aversion two-child household: returns
/// `(index of the child the Bernoulli refers to, probability)`.
fn pair_selection(female: &[bool], theta: &Theta) -> (usize, f64) {
    match Composition::from_genders(female) {
        Composition::OnlyDaughters | Composition::OnlySons => (0, theta.p1),
        Composition::Mixed { firstborn_female: true } => (0, theta.p_fb_d),
        Composition::Mixed { firstborn_female: false } => (1, theta.p_sb_d),
    }
}

/// Deterministic extensive set for given uniforms.
pub fn select_extensive_set(
    female: &[bool],
    theta: &Theta,
    u: &ExtensiveUniforms,
) -> Result<ExtensiveDraw> {
    let n = female.len();
    check_family_size(n)?;
    let [u_high, u_mid, u1, u2] = u.0;
    if u_high < theta.p_high_aversion {
        return Ok(ExtensiveDraw {
            aversion: Aversion::High,
            educated: vec![true; n],
        });
    }
    if n == 2 {
        let (k, p) = pair_selection(female, theta);
        let mut educated = vec![false; 2];
        if u1 < p {
            educated[k] = true;
        } else {
            educated[1 - k] = true;
        }
        return Ok(ExtensiveDraw {
            aversion: Aversion::Low,
            educated,
        });
    }
    let probs = theta.three_child.probs_for(female);
    if u_mid < theta.three_child.p_medium {
        let educated = if u1 < probs.medium[0] {
            if u2 < probs.medium[1] {
                vec![true, true, false]
            } else {
                vec![true, false, true]
            }
        } else {
            vec![false, true, true]
        };
        Ok(ExtensiveDraw {
            aversion: Aversion::Medium,
            educated,
        })
    } else {
        let educated = if u1 < probs.low[0] {
            vec![true, false, false]
        } else if u2 < probs.low[1] {
            vec![false, true, false]
        } else {
            vec![false, false, true]
        };
        Ok(ExtensiveDraw {
            aversion: Aversion::Low,
            educated,
        })
    }
}

/// Draw the extensive set for `hh`.
pub fn draw_extensive_set<R: Rng + ?Sized>(
    hh: &HouseholdSpec,
    theta: &Theta,
    rng: &mut R,
) -> Result<ExtensiveDraw> {
    let u = ExtensiveUniforms::draw(rng);
    select_extensive_set(&hh.genders(), theta, &u)
}

/// Every reachable extensive set with its probability, in a fixed order.
/// Probabilities sum to one; zero-probability sets are dropped.
pub fn extensive_distribution(female: &[bool], theta: &Theta) -> Result<Vec<(Vec<bool>, f64)>> {
    let n = female.len();
    check_family_size(n)?;
    let ph = theta.p_high_aversion;
    let mut out = vec![(vec![true; n], ph)];
    if n == 2 {
        let (k, p) = pair_selection(female, theta);
        let mut chosen = vec![false; 2];
        chosen[k] = true;
        let mut other = vec![false; 2];
        other[1 - k] = true;
        out.push((chosen, (1.0 - ph) * p));
        out.push((other, (1.0 - ph) * (1.0 - p)));
    } else {
        let pr = theta.three_child.probs_for(female);
        let pm = (1.0 - ph) * theta.three_child.p_medium;
        let pl = (1.0 - ph) * (1.0 - theta.three_child.p_medium);
        out.push((vec![true, true, false], pm * pr.medium[0] * pr.medium[1]));
        out.push((vec![true, false, true], pm * pr.medium[0] * (1.0 - pr.medium[1])));
        out.push((vec![false, true, true], pm * (1.0 - pr.medium[0])));
        out.push((vec![true, false, false], pl * pr.low[0]));
        out.push((vec![false, true, false], pl * (1.0 - pr.low[0]) * pr.low[1]));
        out.push((vec![false, false, true], pl * (1.0 - pr.low[0]) * (1.0 - pr.low[1])));
    }
    out.retain(|(_, p)| *p > 0.0);
    Ok(out)
}

/// The `k` children with the highest single-child utility when given the whole
/// budget, `a_i q_T^delta_i - alpha_i q_T`. Ties go to the lower birth order.
pub fn utility_ranked_set(hh: &HouseholdSpec, theta: &Theta, k: usize) -> Vec<bool> {
    let params = params_for(&hh.genders(), &hh.abilities(), theta);
    let q = hh.q_total;
    let mut order: Vec<usize> = (0..params.len()).collect();
    // stable sort keeps lower birth order first among equals
    order.sort_by(|&i, &j| {
        params[j]
            .value(q)
            .partial_cmp(&params[i].value(q))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut educated = vec![false; params.len()];
    for &i in order.iter().take(k) {
        educated[i] = true;
    }
    educated
}
