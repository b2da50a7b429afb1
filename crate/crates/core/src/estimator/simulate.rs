//! Simulated model moments on a fixed template.
//!
//! The template copies observed households of one stratum: their genders,
//! their budget (total years actually used) and how many children they
//! educate, which identifies the aversion type. Each template household
//! carries `s` fixed ability draws (in antithetic pairs), so the simulated moments are a
//! deterministic, smooth function of the parameters. Which children a
//! low or medium-aversion household educates is averaged analytically over
//! the selection probabilities rather than drawn.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{extensive_distribution, params_for, solve_with_params, Theta};
use crate::moments::{MomentAccumulator, MomentVector, Stratum};
use crate::population::{antithetic_ability_pair, sample_ability_vector, AbilityDist, HouseholdRecord};
use crate::rng::{domain, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateHousehold {
    pub female: Vec<bool>,
    pub q_total: f64,
    pub n_educated: usize,
    /// `s` relative-ability vectors.
    pub abilities: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub stratum: Stratum,
    pub q_max: f64,
    pub households: Vec<TemplateHousehold>,
}

/// Households of `stratum` with a positive budget.
pub fn usable_households(data: &[HouseholdRecord], stratum: Stratum) -> Vec<&HouseholdRecord> {
    data.iter().filter(|h| stratum.contains(h) && h.q_total() > 0.0).collect()
}

impl Template {
    /// Take `n` households by systematic sampling from the usable data households
    /// of `stratum` and attach `s` ability vectors to each.
    pub fn from_data(
        data: &[HouseholdRecord],
        stratum: Stratum,
        n: usize,
        s: usize,
        ability: &AbilityDist,
        q_max: f64,
        seed: u64,
    ) -> Result<Template> {
        let pool = usable_households(data, stratum);
        if pool.is_empty() {
            return Err(Error::InsufficientData(format!("no households with a positive budget in stratum {stratum}")));
        }
        if n == 0 || s == 0 {
            return Err(Error::invalid("households / s", "must be at least 1"));
        }
        // systematic sample over the pool ordered by (genders, number
        // educated, budget): the template mirrors the data's joint law of
        // these far more closely than independent resampling would
        let mut order: Vec<usize> = (0..pool.len()).collect();
        let key = |h: &HouseholdRecord| (h.genders(), h.educated().iter().filter(|&&e| e).count());
        order.sort_by(|&i, &j| {
            key(pool[i])
                .cmp(&key(pool[j]))
                .then(pool[i].q_total().total_cmp(&pool[j].q_total()))
                .then(pool[i].household_id.cmp(&pool[j].household_id))
        });
        let start: f64 = stream(seed, domain::TEMPLATE, 0).random();
        let step = pool.len() as f64 / n as f64;
        let idx: Vec<usize> = (0..n)
            .map(|j| order[(((j as f64 + start) * step) as usize).min(pool.len() - 1)])
            .collect();
        let households = idx
            .par_iter()
            .enumerate()
            .map(|(j, &i)| {
                let h = pool[i];
                let mut rng = stream(seed, domain::ABILITY, j as u64);
                // antithetic pairs; an odd last draw is plain
                let mut abilities = Vec::with_capacity(s);
                while abilities.len() + 1 < s {
                    let (x, y) = antithetic_ability_pair(stratum.n_c, ability, &mut rng)?;
                    abilities.push(x);
                    abilities.push(y);
                }
                if abilities.len() < s {
                    abilities.push(sample_ability_vector(stratum.n_c, ability, &mut rng)?);
                }
                Ok(TemplateHousehold {
                    female: h.genders(),
                    q_total: h.q_total(),
                    n_educated: h.educated().iter().filter(|&&e| e).count(),
                    abilities,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Template {
            stratum,
            q_max,
            households,
        })
    }

    pub fn draws_per_household(&self) -> usize {
        self.households.first().map_or(0, |h| h.abilities.len())
    }
}

/// Educated sets with exactly `k` children and their probabilities
/// conditional on the household educating `k` children.
pub fn conditional_sets(female: &[bool], theta: &Theta, k: usize) -> Result<Vec<(Vec<bool>, f64)>> {
    let n = female.len();
    if k == n {
        return Ok(vec![(vec![true; n], 1.0)]);
    }
    let mut t = theta.clone();
    t.p_high_aversion = 0.0;
    // any interior medium share gives the same conditional law within a type
    t.three_child.p_medium = 0.5;
    let mut sets: Vec<(Vec<bool>, f64)> = extensive_distribution(female, &t)?
        .into_iter()
        .filter(|(m, _)| m.iter().filter(|&&e| e).count() == k)
        .collect();
    let total: f64 = sets.iter().map(|(_, p)| p).sum();
    if !(total > 0.0) {
        return Err(Error::InsufficientData(format!("no educated set of size {k} has positive probability")));
    }
    for (_, p) in sets.iter_mut() {
        *p /= total;
    }
    Ok(sets)
}

/// Model moments at `theta` on `template`.
pub fn simulate_model_moments(theta: &Theta, template: &Template) -> Result<MomentVector> {
    let contributions: Vec<Vec<(Vec<f64>, f64)>> = template
        .households
        .par_iter()
        .map(|h| household_contributions(theta, h, template.q_max))
        .collect::<Result<Vec<_>>>()?;
    let mut acc = MomentAccumulator::new(template.stratum.n_c);
    for (h, rows) in template.households.iter().zip(&contributions) {
        acc.count_household(&h.female);
        for (years, w) in rows {
            acc.add(&h.female, years, *w);
        }
    }
    acc.finish(template.stratum, true)
}

fn household_contributions(theta: &Theta, h: &TemplateHousehold, q_max: f64) -> Result<Vec<(Vec<f64>, f64)>> {
    let sets = conditional_sets(&h.female, theta, h.n_educated)?;
    let s = h.abilities.len() as f64;
    let mut out = Vec::new();
    for (mask, p) in sets {
        if p == 0.0 {
            continue;
        }
        if h.n_educated == 1 {
            // a single educated child takes the whole (capped) budget
            let years: Vec<f64> = mask.iter().map(|&e| if e { h.q_total.min(q_max) } else { 0.0 }).collect();
            out.push((years, p));
            continue;
        }
        for a in &h.abilities {
            let params = params_for(&h.female, a, theta);
            let years = solve_with_params(&params, &mask, h.q_total, q_max)?;
            out.push((years, p / s));
        }
    }
    Ok(out)
}
