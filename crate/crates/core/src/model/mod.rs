//! Structural objects and the single-household problem.
//!
//! A household with `N_c` children splits a budget `q_T` of education years.
//! Child `i` contributes `a_i * q_i^delta_i - alpha_i * q_i` to household
//! utility, where `a_i` is relative ability (abilities sum to one),
//! `delta_i = gamma - theta1 * Female_i * (share of brothers)` and `alpha_i`
//! rises with birth order rank by `alpha_gap` per step above a base cost.
//! An aversion type decides which children are educated at all.

mod extensive;
mod solver;
mod threshold;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::DEFAULT_Q_MAX;

pub use extensive::{
    draw_extensive_set, extensive_distribution, select_extensive_set, utility_ranked_set,
    Aversion, ExtensiveDraw, ExtensiveUniforms, SelectionProbs, ThreeChildExtensive,
};
pub use solver::{solve_allocation, solve_with_params, BISECTION_MAX_ITER, BISECTION_TOL};
pub use threshold::{costgap_from_threshold, p_from_threshold, threshold_from_costgap, threshold_from_p};

/// Head-of-household education, the stratum part of the observables `Z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParentEduc {
    None,
    Primary,
    Junior,
    Senior,
    College,
}

impl ParentEduc {
    pub const ALL: [ParentEduc; 5] = [
        ParentEduc::None,
        ParentEduc::Primary,
        ParentEduc::Junior,
        ParentEduc::Senior,
        ParentEduc::College,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ParentEduc::None => "none",
            ParentEduc::Primary => "primary",
            ParentEduc::Junior => "junior",
            ParentEduc::Senior => "senior",
            ParentEduc::College => "college",
        }
    }
}

impl fmt::Display for ParentEduc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParentEduc {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParentEduc::ALL
            .iter()
            .copied()
            .find(|p| p.as_str() == s.trim())
            .ok_or_else(|| {
                Error::invalid(
                    "parent_educ",
                    format!("`{s}` is not one of none, primary, junior, senior, college"),
                )
            })
    }
}

fn default_gamma() -> f64 {
    0.5
}

fn default_alpha_base() -> f64 {
    0.01
}

fn default_p_high() -> f64 {
    0.5
}

/// Structural parameters.
///
/// `gamma` and `alpha_base` are never estimated; they are configuration.
/// Only differences in cost matter for allocations, so `alpha_base` is a
/// normalisation of the last-born child's per-year cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theta {
    /// Gender penalty on the return exponent for daughters with brothers.
    pub theta1: f64,
    /// Per-year cost difference between consecutive birth-order ranks.
    pub alpha_gap: f64,
    /// Same-gender, low aversion: probability the firstborn is the educated child.
    pub p1: f64,
    /// Mixed, firstborn daughter: probability the daughter is the educated child.
    pub p_fb_d: f64,
    /// Mixed, firstborn son: probability the second-born daughter is educated.
    pub p_sb_d: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Share of households that educate every child.
    #[serde(default = "default_p_high")]
    pub p_high_aversion: f64,
    #[serde(default = "default_alpha_base")]
    pub alpha_base: f64,
    #[serde(default)]
    pub three_child: ThreeChildExtensive,
}

impl Default for Theta {
    fn default() -> Self {
        Theta::reference_non_educated()
    }
}

impl Theta {
    /// Estimates reported for two-child households with non-educated parents.
    /// The high-aversion share is set to one half, the observed share of such
    /// households with every child educated.
    pub fn reference_non_educated() -> Self {
        Theta {
            theta1: 0.0218,
            alpha_gap: 0.0018,
            p1: 0.3663,
            p_fb_d: 0.1124,
            p_sb_d: 0.3217,
            gamma: default_gamma(),
            p_high_aversion: default_p_high(),
            alpha_base: default_alpha_base(),
            three_child: ThreeChildExtensive::default(),
        }
    }

    /// Intensive-margin estimates for college-educated parents. Nearly all of
    /// these households educate every child, so the selection probabilities
    /// are left symmetric.
    pub fn reference_college() -> Self {
        Theta {
            theta1: 0.0115,
            alpha_gap: 0.0016,
            p1: 0.5,
            p_fb_d: 0.5,
            p_sb_d: 0.5,
            p_high_aversion: 0.98,
            ..Theta::reference_non_educated()
        }
    }

    /// Same household type with every gender and birth-order disadvantage
    /// removed: no exponent penalty, no cost gap, symmetric selection.
    pub fn no_disadvantage(&self) -> Theta {
        Theta {
            theta1: 0.0,
            alpha_gap: 0.0,
            p1: 0.5,
            p_fb_d: 0.5,
            p_sb_d: 0.5,
            three_child: ThreeChildExtensive {
                p_medium: self.three_child.p_medium,
                ..ThreeChildExtensive::default()
            },
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |field: &str, v: f64| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(field, format!("{v} is not a probability")))
            }
        };
        unit("p1", self.p1)?;
        unit("p_fb_d", self.p_fb_d)?;
        unit("p_sb_d", self.p_sb_d)?;
        unit("p_high_aversion", self.p_high_aversion)?;
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid("gamma", format!("{} is outside (0, 1)", self.gamma)));
        }
        if !self.theta1.is_finite() || self.theta1 >= self.gamma {
            return Err(Error::invalid(
                "theta1",
                format!("{} must be finite and below gamma = {}", self.theta1, self.gamma),
            ));
        }
        if !self.alpha_gap.is_finite() {
            return Err(Error::invalid("alpha_gap", "must be finite"));
        }
        if !(self.alpha_base.is_finite() && self.alpha_base >= 0.0) {
            return Err(Error::invalid("alpha_base", "must be finite and nonnegative"));
        }
        self.three_child.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChildSpec {
    pub female: bool,
    pub birth_order: u32,
    /// Relative ability; abilities within a household sum to one.
    pub ability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdSpec {
    /// Children ordered by birth order.
    pub children: Vec<ChildSpec>,
    pub q_total: f64,
    pub q_max: f64,
    pub parent_educ: ParentEduc,
}

/// Gender composition of a household.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Composition {
    OnlyDaughters,
    OnlySons,
    Mixed { firstborn_female: bool },
}

impl Composition {
    pub fn from_genders(female: &[bool]) -> Composition {
        if female.iter().all(|&f| f) {
            Composition::OnlyDaughters
        } else if female.iter().all(|&f| !f) {
            Composition::OnlySons
        } else {
            Composition::Mixed {
                firstborn_female: female[0],
            }
        }
    }

    pub fn is_same_gender(&self) -> bool {
        !matches!(self, Composition::Mixed { .. })
    }
}

/// Birth-ordered composition code such as `"ds"` (daughter, then son).
pub fn composition_code(female: &[bool]) -> String {
    female.iter().map(|&f| if f { 'd' } else { 's' }).collect()
}

pub fn check_family_size(n: usize) -> Result<()> {
    if (2..=3).contains(&n) {
        Ok(())
    } else {
        Err(Error::UnsupportedFamilySize(n))
    }
}

impl HouseholdSpec {
    pub fn new(children: Vec<ChildSpec>, q_total: f64, parent_educ: ParentEduc) -> Self {
        HouseholdSpec {
            children,
            q_total,
            q_max: DEFAULT_Q_MAX,
            parent_educ,
        }
    }

    /// Two-child household from genders and abilities in birth order.
    pub fn pair(female: [bool; 2], ability: [f64; 2], q_total: f64) -> Self {
        let children = (0..2)
            .map(|i| ChildSpec {
                female: female[i],
                birth_order: i as u32 + 1,
                ability: ability[i],
            })
            .collect();
        HouseholdSpec::new(children, q_total, ParentEduc::None)
    }

    pub fn n_children(&self) -> usize {
        self.children.len()
    }

    pub fn genders(&self) -> Vec<bool> {
        self.children.iter().map(|c| c.female).collect()
    }

    pub fn abilities(&self) -> Vec<f64> {
        self.children.iter().map(|c| c.ability).collect()
    }

    pub fn composition(&self) -> Composition {
        Composition::from_genders(&self.genders())
    }

    pub fn set_abilities(&mut self, ability: &[f64]) {
        for (c, &a) in self.children.iter_mut().zip(ability) {
            c.ability = a;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_children();
        check_family_size(n)?;
        for (i, c) in self.children.iter().enumerate() {
            if c.birth_order != i as u32 + 1 {
                return Err(Error::invalid(
                    "birth_order",
                    format!("children must be listed in birth order 1..{n}"),
                ));
            }
            if !(c.ability > 0.0 && c.ability < 1.0) {
                return Err(Error::invalid("ability", format!("{} is outside (0, 1)", c.ability)));
            }
        }
        let sum: f64 = self.children.iter().map(|c| c.ability).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("ability", format!("abilities sum to {sum}, not 1")));
        }
        if !(self.q_max > 0.0) {
            return Err(Error::invalid("q_max", "must be positive"));
        }
        if !(self.q_total >= 0.0) || self.q_total > n as f64 * self.q_max + 1e-9 {
            return Err(Error::invalid(
                "q_total",
                format!("{} is outside [0, N_c * q_max]", self.q_total),
            ));
        }
        Ok(())
    }
}

/// Per-child years of education and the extensive-margin mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub q: Vec<f64>,
    pub educated_mask: Vec<bool>,
}

/// The primitives of one child's contribution to household utility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChildParams {
    pub ability: f64,
    pub delta: f64,
    pub alpha: f64,
}

impl ChildParams {
    pub fn value(&self, q: f64) -> f64 {
        self.ability * q.powf(self.delta) - self.alpha * q
    }

    /// Marginal utility; `+inf` at `q = 0` since `delta < 1`.
    pub fn marginal(&self, q: f64) -> f64 {
        self.ability * self.delta * q.powf(self.delta - 1.0) - self.alpha
    }
}

/// Return exponent for child `i` given the genders of all children.
pub fn delta_for(female: &[bool], i: usize, gamma: f64, theta1: f64) -> f64 {
    if !female[i] || female.len() < 2 {
        return gamma;
    }
    let brothers = female
        .iter()
        .enumerate()
        .filter(|&(j, &f)| j != i && !f)
        .count();
    gamma - theta1 * brothers as f64 / (female.len() - 1) as f64
}

/// `delta` for child `child` (index in birth order) of `hh`.
pub fn delta_exponent(hh: &HouseholdSpec, child: usize, theta: &Theta) -> f64 {
    delta_for(&hh.genders(), child, theta.gamma, theta.theta1)
}

/// Per-year cost by birth-order index: the last-born pays `alpha_base`, each
/// earlier rank pays `alpha_gap` more.
pub fn alpha_for(n_children: usize, i: usize, theta: &Theta) -> f64 {
    theta.alpha_base + theta.alpha_gap * (n_children - 1 - i) as f64
}

pub fn params_for(female: &[bool], ability: &[f64], theta: &Theta) -> Vec<ChildParams> {
    let n = female.len();
    (0..n)
        .map(|i| ChildParams {
            ability: ability[i],
            delta: delta_for(female, i, theta.gamma, theta.theta1),
            alpha: alpha_for(n, i, theta),
        })
        .collect()
}

pub fn child_params(hh: &HouseholdSpec, theta: &Theta) -> Vec<ChildParams> {
    params_for(&hh.genders(), &hh.abilities(), theta)
}

/// Household utility of `alloc` with `educated` the realised extensive set.
pub fn household_utility(
    alloc: &Allocation,
    hh: &HouseholdSpec,
    theta: &Theta,
    educated: &[bool],
) -> Result<f64> {
    let n = hh.n_children();
    if alloc.q.len() != n || educated.len() != n {
        return Err(Error::Infeasible(format!(
            "allocation has {} entries, household has {n} children",
            alloc.q.len()
        )));
    }
    let mut total = 0.0;
    for (i, (&q, &e)) in alloc.q.iter().zip(educated).enumerate() {
        if q < -1e-12 || q > hh.q_max + 1e-9 || !q.is_finite() {
            return Err(Error::Infeasible(format!("q[{i}] = {q} outside [0, {}]", hh.q_max)));
        }
        if !e && q != 0.0 {
            return Err(Error::Infeasible(format!("uneducated child {i} receives {q} years")));
        }
    }
    let spent: f64 = alloc.q.iter().sum();
    if spent > hh.q_total + 1e-9 {
        return Err(Error::Infeasible(format!(
            "spends {spent} years, budget is {}",
            hh.q_total
        )));
    }
    for (p, (&q, &e)) in child_params(hh, theta).iter().zip(alloc.q.iter().zip(educated)) {
        if e {
            total += p.value(q.max(0.0));
        }
    }
    Ok(total)
}

/// Realised outcome of one simulated household.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdOutcome {
    pub years: Vec<f64>,
    pub educated: Vec<bool>,
    pub aversion: Aversion,
}

/// How the low/medium-aversion household picks its educated children.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtensiveMode {
    /// Composition-specific Bernoulli draws, independent of abilities.
    #[default]
    Bernoulli,
    /// Educate the children with the highest single-child utility at `q_T`.
    UtilityRanked,
}

/// Draw the extensive set, then solve the intensive allocation.
pub fn simulate_household<R: Rng + ?Sized>(
    hh: &HouseholdSpec,
    theta: &Theta,
    rng: &mut R,
) -> Result<HouseholdOutcome> {
    let u = ExtensiveUniforms::draw(rng);
    simulate_household_with(hh, theta, &u, ExtensiveMode::Bernoulli)
}

pub fn simulate_household_with(
    hh: &HouseholdSpec,
    theta: &Theta,
    uniforms: &ExtensiveUniforms,
    mode: ExtensiveMode,
) -> Result<HouseholdOutcome> {
    if !(hh.q_total > 0.0) {
        return Err(Error::NonPositiveBudget(hh.q_total));
    }
    let draw = select_extensive_set(&hh.genders(), theta, uniforms)?;
    let educated = match (mode, draw.aversion) {
        (_, Aversion::High) | (ExtensiveMode::Bernoulli, _) => draw.educated,
        (ExtensiveMode::UtilityRanked, _) => {
            let k = draw.educated.iter().filter(|&&e| e).count();
            utility_ranked_set(hh, theta, k)
        }
    };
    let alloc = solve_allocation(hh, theta, &educated)?;
    Ok(HouseholdOutcome {
        years: alloc.q,
        educated,
        aversion: draw.aversion,
    })
}
