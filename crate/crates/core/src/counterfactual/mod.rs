//! Counterfactual experiments.
//!
//! * CF1: the relative ability a firstborn daughter needs to match her
//!   younger brother's schooling.
//! * CF2: gap distributions under baseline parameters, without
//!   disadvantages, under a cost-cut policy and with only the extensive
//!   margin fixed.
//! * CF3: the gap before and after a proportional rise in household budgets.
//!
//! Every scenario draws household `h`'s extensive-margin uniforms (and
//! optional ability resample) from the same stream, so scenarios are
//! compared on common random numbers.

mod distribution;
mod policy;

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    params_for, select_extensive_set, solve_with_params, ExtensiveUniforms, HouseholdSpec, Theta,
};
use crate::population::AbilityDist;
use crate::rng::{domain, stream};

pub use distribution::{dominance_violation, ks_distance, symmetry_defect, GapDistribution};
pub use policy::{PolicySpec, ResolvedPolicy};

/// Which within-household gap is collected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapKind {
    /// Mean daughters' minus mean sons' years, mixed households only.
    #[default]
    DaughterSon,
    /// Firstborn minus second-born years, all households.
    BirthOrder,
}

impl GapKind {
    fn gap(&self, female: &[bool], years: &[f64]) -> Option<f64> {
        match self {
            GapKind::BirthOrder => Some(years[0] - years[1]),
            GapKind::DaughterSon => {
                let (mut d, mut nd, mut s, mut ns) = (0.0, 0usize, 0.0, 0usize);
                for (&f, &y) in female.iter().zip(years) {
                    if f {
                        d += y;
                        nd += 1;
                    } else {
                        s += y;
                        ns += 1;
                    }
                }
                (nd > 0 && ns > 0).then(|| d / nd as f64 - s / ns as f64)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub gap: GapKind,
    /// Ability law used by the threshold algebra.
    #[serde(default)]
    pub ability: AbilityDist,
    /// Reference budget for the extensive-margin policy mapping; defaults to
    /// the mean budget of the households.
    #[serde(default)]
    pub q_ref: Option<f64>,
    /// Draw two-child relative abilities from these recovered values
    /// instead of using the households' own.
    #[serde(default)]
    pub empirical_abilities: Option<Vec<f64>>,
}

/// One simulated scenario over `households`: per-child cost multipliers come
/// from `policy` (none for the plain scenarios).
fn simulate_gaps(
    label: &str,
    households: &[HouseholdSpec],
    theta: &Theta,
    policy: Option<&ResolvedPolicy>,
    cfg: &CfConfig,
    budget_scale: f64,
) -> Result<GapDistribution> {
    if let Some(e) = &cfg.empirical_abilities {
        if e.is_empty() || e.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::invalid("empirical_abilities", "need values strictly inside (0, 1)"));
        }
    }
    let gaps: Vec<Option<f64>> = households
        .par_iter()
        .enumerate()
        .map(|(h, hh)| {
            let mut rng = stream(cfg.seed, domain::COUNTERFACTUAL, h as u64);
            let u = ExtensiveUniforms::draw(&mut rng);
            let female = hh.genders();
            let mut ability = hh.abilities();
            if let (Some(e), 2) = (&cfg.empirical_abilities, ability.len()) {
                let a1 = e[rng.random_range(0..e.len())];
                ability = vec![a1, 1.0 - a1];
            }
            let q_total = (hh.q_total * budget_scale).min(hh.n_children() as f64 * hh.q_max);
            let draw = select_extensive_set(&female, theta, &u)?;
            let mut params = params_for(&female, &ability, theta);
            if let Some(p) = policy {
                for (c, m) in params.iter_mut().zip(p.alpha_multipliers(&female)) {
                    c.alpha *= m;
                }
            }
            let years = solve_with_params(&params, &draw.educated, q_total, hh.q_max)?;
            Ok(cfg.gap.gap(&female, &years))
        })
        .collect::<Result<Vec<_>>>()?;
    let samples: Vec<f64> = gaps.into_iter().flatten().collect();
    if samples.is_empty() {
        return Err(Error::InsufficientData(format!("scenario `{label}` produced no gap samples")));
    }
    Ok(GapDistribution::new(label, &samples))
}

fn mean_budget(households: &[HouseholdSpec]) -> Result<f64> {
    if households.is_empty() {
        return Err(Error::InsufficientData("no households".into()));
    }
    Ok(households.iter().map(|h| h.q_total).sum::<f64>() / households.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub n: usize,
    pub mean: f64,
    pub se: f64,
}

impl ScenarioSummary {
    pub fn of(d: &GapDistribution) -> Self {
        ScenarioSummary {
            scenario: d.scenario.clone(),
            n: d.len(),
            mean: d.mean(),
            se: d.se(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cf2Result {
    pub baseline: GapDistribution,
    pub no_disadvantage: GapDistribution,
    pub policy: GapDistribution,
    pub extensive_fix: GapDistribution,
    pub resolved: ResolvedPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cf2Summary {
    pub scenarios: Vec<ScenarioSummary>,
    pub ks_policy_vs_no_disadvantage: f64,
    pub ks_baseline_vs_no_disadvantage: f64,
    pub ks_extensive_fix_vs_no_disadvantage: f64,
    /// `sup (F_no_disadvantage - F_baseline)`; at most 0.01 counts as dominance.
    pub dominance_violation: f64,
    pub dominates: bool,
    pub resolved: ResolvedPolicy,
}

impl Cf2Result {
    pub fn distributions(&self) -> [&GapDistribution; 4] {
        [&self.baseline, &self.no_disadvantage, &self.policy, &self.extensive_fix]
    }

    pub fn summary(&self) -> Result<Cf2Summary> {
        let v = dominance_violation(&self.no_disadvantage, &self.baseline)?;
        Ok(Cf2Summary {
            scenarios: self.distributions().iter().map(|d| ScenarioSummary::of(d)).collect(),
            ks_policy_vs_no_disadvantage: ks_distance(&self.policy, &self.no_disadvantage)?,
            ks_baseline_vs_no_disadvantage: ks_distance(&self.baseline, &self.no_disadvantage)?,
            ks_extensive_fix_vs_no_disadvantage: ks_distance(&self.extensive_fix, &self.no_disadvantage)?,
            dominance_violation: v,
            dominates: v <= 0.01,
            resolved: self.resolved.clone(),
        })
    }
}

/// Baseline, no-disadvantage, policy and extensive-fix gap distributions.
pub fn cf2_policy_distributions(
    theta: &Theta,
    policy: &PolicySpec,
    households: &[HouseholdSpec],
    cfg: &CfConfig,
) -> Result<Cf2Result> {
    theta.validate()?;
    let q_ref = match cfg.q_ref {
        Some(q) => q,
        None => mean_budget(households)?,
    };
    let resolved = policy.resolve(theta, q_ref, &cfg.ability)?;
    let fix = PolicySpec {
        extensive_fix: true,
        ..PolicySpec::default()
    }
    .resolve(theta, q_ref, &cfg.ability)?;
    Ok(Cf2Result {
        baseline: simulate_gaps("baseline", households, theta, None, cfg, 1.0)?,
        no_disadvantage: simulate_gaps("no_disadvantage", households, &theta.no_disadvantage(), None, cfg, 1.0)?,
        policy: simulate_gaps("policy", households, &resolved.theta, Some(&resolved), cfg, 1.0)?,
        extensive_fix: simulate_gaps("extensive_fix", households, &fix.theta, None, cfg, 1.0)?,
        resolved,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cf3Result {
    pub before: GapDistribution,
    pub after: GapDistribution,
    pub mean_before: f64,
    pub mean_after: f64,
    pub scale: f64,
    /// Share of households whose scaled budget hit `N_c * q_max`.
    pub capped_share: f64,
    pub warnings: Vec<String>,
}

/// Scale every budget by `qbar_to / qbar_from` (capped at `N_c * q_max`)
/// and re-simulate at fixed `theta`.
pub fn cf3_resource_increase(
    theta: &Theta,
    households: &[HouseholdSpec],
    qbar_from: f64,
    qbar_to: f64,
    cfg: &CfConfig,
) -> Result<Cf3Result> {
    theta.validate()?;
    if !(qbar_from > 0.0 && qbar_to >= qbar_from) {
        return Err(Error::invalid("qbar", format!("need qbar_to >= qbar_from > 0, got {qbar_from} -> {qbar_to}")));
    }
    let scale = qbar_to / qbar_from;
    let capped = households
        .iter()
        .filter(|h| h.q_total * scale >= h.n_children() as f64 * h.q_max)
        .count();
    let capped_share = if households.is_empty() { 0.0 } else { capped as f64 / households.len() as f64 };
    let mut warnings = Vec::new();
    if capped_share > 0.5 {
        warnings.push(format!(
            "{:.1}% of households hit the budget cap after scaling",
            100.0 * capped_share
        ));
    }
    let before = simulate_gaps("before", households, theta, None, cfg, 1.0)?;
    let after = simulate_gaps("after", households, theta, None, cfg, scale)?;
    Ok(Cf3Result {
        mean_before: before.mean(),
        mean_after: after.mean(),
        before,
        after,
        scale,
        capped_share,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub a1: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cf1Result {
    pub q_total: f64,
    pub ability_grid: Vec<f64>,
    /// Daughter-minus-son years with both educated, at `theta`.
    pub gap_with: Vec<f64>,
    /// The same without disadvantages.
    pub gap_without: Vec<f64>,
    /// Expected gap at `theta`, averaging over extensive-margin types.
    pub expected_gap_with: Vec<f64>,
    pub crossing: Option<Crossing>,
    pub crossing_without: Option<Crossing>,
    pub expected_crossing: Option<Crossing>,
}

/// First zero of a piecewise-linear curve, by linear interpolation.
pub fn zero_crossing(grid: &[f64], curve: &[f64]) -> Option<Crossing> {
    let make = |a: f64| Crossing { a1: a, ratio: a / (1.0 - a) };
    for i in 0..curve.len() {
        if curve[i] == 0.0 {
            return Some(make(grid[i]));
        }
        if i + 1 < curve.len() && (curve[i] < 0.0) != (curve[i + 1] < 0.0) && curve[i + 1] != 0.0 {
            let w = curve[i] / (curve[i] - curve[i + 1]);
            return Some(make(grid[i] + w * (grid[i + 1] - grid[i])));
        }
    }
    None
}

/// Gap curves for a household with a firstborn daughter of relative ability
/// `a1` and a second-born son, over `ability_grid`.
pub fn cf1_gap_curve(theta: &Theta, q_total: f64, ability_grid: &[f64], q_max: f64) -> Result<Cf1Result> {
    theta.validate()?;
    if ability_grid.is_empty() || ability_grid.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(Error::invalid("ability_grid", "values must lie in (0, 1)"));
    }
    if ability_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("ability_grid", "must be strictly increasing"));
    }
    if !(q_total > 0.0) {
        return Err(Error::NonPositiveBudget(q_total));
    }
    let female = [true, false];
    let free = theta.no_disadvantage();
    let curve = |t: &Theta| -> Result<Vec<f64>> {
        ability_grid
            .iter()
            .map(|&a| {
                let params = params_for(&female, &[a, 1.0 - a], t);
                let q = solve_with_params(&params, &[true, true], q_total, q_max)?;
                Ok(q[0] - q[1])
            })
            .collect()
    };
    let with = curve(theta)?;
    let without = curve(&free)?;
    let solo = q_total.min(q_max);
    let ext = (1.0 - theta.p_high_aversion) * (theta.p_fb_d * solo - (1.0 - theta.p_fb_d) * solo);
    let expected: Vec<f64> = with.iter().map(|g| theta.p_high_aversion * g + ext).collect();
    Ok(Cf1Result {
        q_total,
        ability_grid: ability_grid.to_vec(),
        crossing: zero_crossing(ability_grid, &with),
        crossing_without: zero_crossing(ability_grid, &without),
        expected_crossing: zero_crossing(ability_grid, &expected),
        gap_with: with,
        gap_without: without,
        expected_gap_with: expected,
    })
}

/// Evenly spaced grid of `n` points strictly inside `(0, 1)`.
pub fn ability_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n.max(2) - 1) as f64).collect()
}

/// `scenario,gap_years` rows for each distribution.
pub fn write_gaps<W: Write>(writer: W, dists: &[&GapDistribution]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["scenario", "gap_years"])?;
    for d in dists {
        for x in &d.samples {
            w.write_record([d.scenario.as_str(), &x.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
