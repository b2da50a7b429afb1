//! Synthetic households, ability draws, the household CSV format and the
//! Beta fit for relative ability.

mod beta_fit;
mod io;

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    check_family_size, simulate_household_with, ChildSpec, ExtensiveMode, ExtensiveUniforms,
    HouseholdSpec, ParentEduc, Theta,
};
use crate::rng::{domain, stream};
use crate::stats;
use crate::DEFAULT_Q_MAX;

pub use beta_fit::{fit_beta_mle, BetaFit};
pub use io::{load_population, load_scores, read_population, read_scores, write_population, write_scores};

/// Beta law of relative ability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbilityDist {
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AbilityDist {
    /// The shapes fitted to relative test scores in the reference application.
    fn default() -> Self {
        AbilityDist {
            beta1: 28.82,
            beta2: 28.78,
        }
    }
}

impl AbilityDist {
    pub fn new(beta1: f64, beta2: f64) -> Result<Self> {
        let d = AbilityDist { beta1, beta2 };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("shape must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.beta1 / (self.beta1 + self.beta2)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        stats::beta_cdf(x, self.beta1, self.beta2)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        stats::beta_quantile(p, self.beta1, self.beta2)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // shapes are validated on construction and deserialisation paths
        Beta::new(self.beta1, self.beta2)
            .expect("valid Beta shapes")
            .sample(rng)
    }

    pub fn log_likelihood(&self, xs: &[f64]) -> f64 {
        let (a, b) = (self.beta1, self.beta2);
        let norm = stats::ln_gamma(a + b) - stats::ln_gamma(a) - stats::ln_gamma(b);
        xs.iter()
            .map(|&x| norm + (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln())
            .sum()
    }
}

/// Relative abilities for `n_children` siblings, summing to one.
///
/// Two children: `a1 ~ Beta`, `a2 = 1 - a1`. Three: i.i.d. Beta draws
/// divided by their sum.
pub fn sample_ability_vector<R: Rng + ?Sized>(
    n_children: usize,
    dist: &AbilityDist,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_family_size(n_children)?;
    dist.validate()?;
    if n_children == 2 {
        let a1 = dist.sample(rng);
        return Ok(vec![a1, 1.0 - a1]);
    }
    let raw: Vec<f64> = (0..n_children).map(|_| dist.sample(rng)).collect();
    Ok(normalise(raw))
}

fn normalise(raw: Vec<f64>) -> Vec<f64> {
    let n = raw.len();
    let total: f64 = raw.iter().sum();
    let mut a: Vec<f64> = raw.iter().map(|x| x / total).collect();
    // push the rounding residue onto the last child so the sum is exact
    let head: f64 = a[..n - 1].iter().sum();
    a[n - 1] = 1.0 - head;
    a
}

/// Two ability vectors with the law of [`sample_ability_vector`], built from
/// the Beta quantiles of `u` and `1 - u` for the same uniforms.
pub fn antithetic_ability_pair<R: Rng + ?Sized>(
    n_children: usize,
    dist: &AbilityDist,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_family_size(n_children)?;
    dist.validate()?;
    let k = if n_children == 2 { 1 } else { n_children };
    let u: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
    let x: Vec<f64> = u.iter().map(|&u| dist.quantile(u)).collect();
    let y: Vec<f64> = u.iter().map(|&u| dist.quantile(1.0 - u)).collect();
    if n_children == 2 {
        return Ok((vec![x[0], 1.0 - x[0]], vec![y[0], 1.0 - y[0]]));
    }
    Ok((normalise(x), normalise(y)))
}

/// Distribution of the per-child average budget `q_T / N_c` (years).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BudgetSampler {
    Fixed { value: f64 },
    Uniform { low: f64, high: f64 },
    Discrete { values: Vec<f64>, weights: Vec<f64> },
}

impl BudgetSampler {
    pub fn validate(&self, q_max: f64) -> Result<()> {
        let in_range = |v: f64| v > 0.0 && v <= q_max;
        match self {
            BudgetSampler::Fixed { value } => {
                if !in_range(*value) {
                    return Err(Error::invalid("q_t_sampler.value", format!("{value} is outside (0, q_max]")));
                }
            }
            BudgetSampler::Uniform { low, high } => {
                if !(in_range(*low) && in_range(*high) && low <= high) {
                    return Err(Error::invalid(
                        "q_t_sampler",
                        format!("uniform bounds [{low}, {high}] must satisfy 0 < low <= high <= q_max"),
                    ));
                }
            }
            BudgetSampler::Discrete { values, weights } => {
                if values.is_empty() || values.len() != weights.len() {
                    return Err(Error::invalid("q_t_sampler", "values and weights must be nonempty and of equal length"));
                }
                if let Some(v) = values.iter().find(|v| !in_range(**v)) {
                    return Err(Error::invalid("q_t_sampler.values", format!("{v} is outside (0, q_max]")));
                }
                check_weights("q_t_sampler.weights", weights.iter().copied())?;
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            BudgetSampler::Fixed { value } => *value,
            BudgetSampler::Uniform { low, high } => {
                let u: f64 = rng.random();
                low + u * (high - low)
            }
            BudgetSampler::Discrete { values, weights } => values[pick(weights, rng.random())],
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            BudgetSampler::Fixed { value } => *value,
            BudgetSampler::Uniform { low, high } => 0.5 * (low + high),
            BudgetSampler::Discrete { values, weights } => {
                values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / weights.iter().sum::<f64>()
            }
        }
    }
}

fn check_weights(field: &str, w: impl Iterator<Item = f64>) -> Result<()> {
    let mut total = 0.0;
    for x in w {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(Error::invalid(field, format!("weight {x} is negative or not finite")));
        }
        total += x;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(field, format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

/// Index drawn from `weights` with uniform `u`.
fn pick(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w / total;
        if u < acc {
            return i;
        }
    }
    // choose the last positive weight when rounding leaves u above the total
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

fn default_q_max() -> f64 {
    DEFAULT_Q_MAX
}

fn default_nc_weights() -> BTreeMap<usize, f64> {
    BTreeMap::from([(2, 1.0)])
}

fn default_parent_educ_weights() -> BTreeMap<ParentEduc, f64> {
    BTreeMap::from([(ParentEduc::None, 1.0)])
}

/// Observables of a synthetic population.
///
/// `gender_comp_weights` is keyed by birth-ordered codes (`"ds"` is a
/// daughter followed by a son) and is read conditionally on family size: the
/// codes of each size in use must sum to one. A size with no codes listed
/// draws each child's gender as a fair coin. `q_t_sampler` gives the
/// per-child average budget by parent education; the household budget is
/// that draw times `N_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub n_households: usize,
    #[serde(default = "default_nc_weights")]
    pub nc_weights: BTreeMap<usize, f64>,
    #[serde(default)]
    pub gender_comp_weights: BTreeMap<String, f64>,
    pub q_t_sampler: BTreeMap<ParentEduc, BudgetSampler>,
    #[serde(default = "default_parent_educ_weights")]
    pub parent_educ_weights: BTreeMap<ParentEduc, f64>,
    #[serde(default)]
    pub ability: AbilityDist,
    #[serde(default = "default_q_max")]
    pub q_max: f64,
    #[serde(default)]
    pub seed: u64,
}

impl PopulationConfig {
    /// Two-child households with uniform composition and a single stratum.
    pub fn two_child(n_households: usize, stratum: ParentEduc, budget: BudgetSampler, seed: u64) -> Self {
        PopulationConfig {
            n_households,
            nc_weights: default_nc_weights(),
            gender_comp_weights: BTreeMap::new(),
            q_t_sampler: BTreeMap::from([(stratum, budget)]),
            parent_educ_weights: BTreeMap::from([(stratum, 1.0)]),
            ability: AbilityDist::default(),
            q_max: DEFAULT_Q_MAX,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_households == 0 {
            return Err(Error::invalid("n_households", "must be positive"));
        }
        if !(self.q_max > 0.0) {
            return Err(Error::invalid("q_max", "must be positive"));
        }
        for &n in self.nc_weights.keys() {
            check_family_size(n).map_err(|_| Error::invalid("nc_weights", format!("family size {n} is not 2 or 3")))?;
        }
        check_weights("nc_weights", self.nc_weights.values().copied())?;
        check_weights("parent_educ_weights", self.parent_educ_weights.values().copied())?;
        self.ability.validate()?;
        for code in self.gender_comp_weights.keys() {
            if !(2..=3).contains(&code.len()) || !code.chars().all(|c| c == 'd' || c == 's') {
                return Err(Error::invalid(
                    "gender_comp_weights",
                    format!("`{code}` is not a birth-ordered d/s code of length 2 or 3"),
                ));
            }
        }
        for n in [2usize, 3] {
            let w: Vec<f64> = self
                .gender_comp_weights
                .iter()
                .filter(|(k, _)| k.len() == n)
                .map(|(_, &v)| v)
                .collect();
            if !w.is_empty() {
                check_weights(&format!("gender_comp_weights (size {n})"), w.into_iter())?;
            }
        }
        for (p, w) in &self.parent_educ_weights {
            if *w > 0.0 {
                let sampler = self.q_t_sampler.get(p).ok_or_else(|| {
                    Error::invalid("q_t_sampler", format!("no budget sampler for stratum `{p}`"))
                })?;
                sampler.validate(self.q_max)?;
            }
        }
        Ok(())
    }

    fn draw_household<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<HouseholdSpec> {
        let sizes: Vec<usize> = self.nc_weights.keys().copied().collect();
        let w: Vec<f64> = self.nc_weights.values().copied().collect();
        let n = sizes[pick(&w, rng.random())];

        let codes: Vec<(&String, &f64)> = self.gender_comp_weights.iter().filter(|(k, _)| k.len() == n).collect();
        let female: Vec<bool> = if codes.is_empty() {
            (0..n).map(|_| rng.random::<f64>() < 0.5).collect()
        } else {
            let w: Vec<f64> = codes.iter().map(|(_, &v)| v).collect();
            codes[pick(&w, rng.random())].0.chars().map(|c| c == 'd').collect()
        };

        let strata: Vec<ParentEduc> = self.parent_educ_weights.keys().copied().collect();
        let w: Vec<f64> = self.parent_educ_weights.values().copied().collect();
        let parent_educ = strata[pick(&w, rng.random())];
        let q_bar = self.q_t_sampler[&parent_educ].sample(rng);

        let ability = sample_ability_vector(n, &self.ability, rng)?;
        let children = (0..n)
            .map(|i| ChildSpec {
                female: female[i],
                birth_order: i as u32 + 1,
                ability: ability[i],
            })
            .collect();
        Ok(HouseholdSpec {
            children,
            q_total: q_bar * n as f64,
            q_max: self.q_max,
            parent_educ,
        })
    }
}

/// Draw `cfg.n_households` households. Household `h` uses its own stream, so
/// the output does not depend on the thread count.
pub fn generate_population(cfg: &PopulationConfig) -> Result<Vec<HouseholdSpec>> {
    cfg.validate()?;
    (0..cfg.n_households)
        .into_par_iter()
        .map(|h| cfg.draw_household(&mut stream(cfg.seed, domain::POPULATION, h as u64)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildRecord {
    pub child_id: u64,
    pub female: bool,
    pub birth_order: u32,
    pub educ_years: f64,
}

/// One observed household; children are sorted by birth order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdRecord {
    pub household_id: u64,
    pub parent_educ: ParentEduc,
    pub children: Vec<ChildRecord>,
}

impl HouseholdRecord {
    pub fn n_children(&self) -> usize {
        self.children.len()
    }

    /// Total years of education actually used, `q_T`.
    pub fn q_total(&self) -> f64 {
        self.children.iter().map(|c| c.educ_years).sum()
    }

    pub fn genders(&self) -> Vec<bool> {
        self.children.iter().map(|c| c.female).collect()
    }

    pub fn years(&self) -> Vec<f64> {
        self.children.iter().map(|c| c.educ_years).collect()
    }

    pub fn educated(&self) -> Vec<bool> {
        self.children.iter().map(|c| c.educ_years > 0.0).collect()
    }

    /// A model household with the observed genders and budget. Abilities are
    /// set to the equal split and must be overwritten before solving.
    pub fn to_spec(&self, q_max: f64) -> HouseholdSpec {
        let n = self.n_children();
        HouseholdSpec {
            children: self
                .children
                .iter()
                .enumerate()
                .map(|(i, c)| ChildSpec {
                    female: c.female,
                    birth_order: i as u32 + 1,
                    ability: 1.0 / n as f64,
                })
                .collect(),
            q_total: self.q_total(),
            q_max,
            parent_educ: self.parent_educ,
        }
    }
}

/// Simulated outcomes for `households`, with household `h` drawing its
/// extensive-margin uniforms from stream `(seed, h)`.
pub fn simulate_population(
    households: &[HouseholdSpec],
    theta: &Theta,
    seed: u64,
    mode: ExtensiveMode,
) -> Result<Vec<HouseholdRecord>> {
    theta.validate()?;
    households
        .par_iter()
        .enumerate()
        .map(|(h, hh)| {
            let mut rng = stream(seed, domain::OUTCOMES, h as u64);
            let u = ExtensiveUniforms::draw(&mut rng);
            let out = simulate_household_with(hh, theta, &u, mode)?;
            Ok(HouseholdRecord {
                household_id: h as u64 + 1,
                parent_educ: hh.parent_educ,
                children: hh
                    .children
                    .iter()
                    .zip(&out.years)
                    .map(|(c, &y)| ChildRecord {
                        child_id: (h as u64 + 1) * 10 + c.birth_order as u64,
                        female: c.female,
                        birth_order: c.birth_order,
                        educ_years: y,
                    })
                    .collect(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_cfg(n: usize) -> PopulationConfig {
        PopulationConfig::two_child(n, ParentEduc::None, BudgetSampler::Uniform { low: 4.0, high: 12.0 }, 7)
    }

    #[test]
    fn ability_vectors_sum_to_one() {
        let d = AbilityDist::default();
        let mut rng = stream(3, 0, 0);
        for n in [2, 3] {
            for _ in 0..2000 {
                let a = sample_ability_vector(n, &d, &mut rng).unwrap();
                assert_eq!(a.len(), n);
                assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(a.iter().all(|&x| x > 0.0 && x < 1.0));
            }
        }
        assert!(matches!(
            sample_ability_vector(4, &d, &mut rng),
            Err(Error::UnsupportedFamilySize(4))
        ));
    }

    #[test]
    fn ability_mean_and_ks() {
        let d = AbilityDist::default();
        let mut rng = stream(5, 0, 0);
        let mut xs: Vec<f64> = (0..100_000)
            .map(|_| sample_ability_vector(2, &d, &mut rng).unwrap()[0])
            .collect();
        let m = stats::mean(&xs);
        assert!((m - d.mean()).abs() < 0.002, "mean {m}");
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = d.cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value of the one-sample KS statistic
        assert!(ks < 1.628 / n.sqrt(), "ks {ks}");
    }

    #[test]
    fn zero_households_rejected() {
        assert!(generate_population(&base_cfg(0)).is_err());
    }

    #[test]
    fn bad_weights_rejected() {
        let mut cfg = base_cfg(10);
        cfg.gender_comp_weights = BTreeMap::from([("dd".into(), 0.5), ("ss".into(), 0.4)]);
        assert!(generate_population(&cfg).is_err());
        let mut cfg = base_cfg(10);
        cfg.gender_comp_weights = BTreeMap::from([("dx".into(), 1.0)]);
        assert!(generate_population(&cfg).is_err());
        let mut cfg = base_cfg(10);
        cfg.nc_weights = BTreeMap::from([(4, 1.0)]);
        assert!(generate_population(&cfg).is_err());
    }

    #[test]
    fn composition_shares_match_weights() {
        let mut cfg = base_cfg(10_000);
        cfg.gender_comp_weights = BTreeMap::from([("dd".into(), 0.5), ("ss".into(), 0.5)]);
        let pop = generate_population(&cfg).unwrap();
        let dd = pop.iter().filter(|h| h.children.iter().all(|c| c.female)).count();
        let share = dd as f64 / pop.len() as f64;
        assert!((share - 0.5).abs() < 0.015, "share {share}");
        assert!(pop.iter().all(|h| h.children[0].female == h.children[1].female));
    }

    #[test]
    fn deterministic_given_seed() {
        let mut cfg = base_cfg(500);
        cfg.nc_weights = BTreeMap::from([(2, 0.6), (3, 0.4)]);
        let a = generate_population(&cfg).unwrap();
        let b = generate_population(&cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| generate_population(&cfg).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn ability_independent_of_gender_and_order() {
        let cfg = base_cfg(100_000);
        let pop = generate_population(&cfg).unwrap();
        let a1: Vec<f64> = pop.iter().map(|h| h.children[0].ability).collect();
        let f1: Vec<f64> = pop.iter().map(|h| h.children[0].female as u8 as f64).collect();
        let corr = |x: &[f64], y: &[f64]| {
            let (mx, my) = (stats::mean(x), stats::mean(y));
            let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
            let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
            let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
            cov / (vx * vy).sqrt()
        };
        assert!(corr(&a1, &f1).abs() < 0.01);
        // birth order: stack both children, correlate ability with first-born flag
        let mut a = a1.clone();
        a.extend(pop.iter().map(|h| h.children[1].ability));
        let mut fb = vec![1.0; pop.len()];
        fb.extend(vec![0.0; pop.len()]);
        assert!(corr(&a, &fb).abs() < 0.01);
    }

    #[test]
    fn budgets_scale_with_family_size() {
        let mut cfg = base_cfg(200);
        cfg.nc_weights = BTreeMap::from([(3, 1.0)]);
        cfg.q_t_sampler = BTreeMap::from([(ParentEduc::None, BudgetSampler::Fixed { value: 9.2 })]);
        for h in generate_population(&cfg).unwrap() {
            assert_eq!(h.n_children(), 3);
            assert!((h.q_total - 27.6).abs() < 1e-12);
        }
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let ok = r#"{"n_households": 5, "q_t_sampler": {"none": {"kind": "fixed", "value": 8}}}"#;
        let cfg: PopulationConfig = serde_json::from_str(ok).unwrap();
        cfg.validate().unwrap();
        let bad = r#"{"n_households": 5, "q_t_sampler": {"none": {"kind": "fixed", "value": 8}}, "colour": 1}"#;
        assert!(serde_json::from_str::<PopulationConfig>(bad).is_err());
    }
}
