//! Simulated method of moments.
//!
//! Estimation for one stratum runs in two stages.
//!
//! 1. The selection probabilities are read off the data: `p1`, `p_fb_d` and
//!    `p_sb_d` are the observed one-educated shares (two-child strata), and
//!    `p_high_aversion` is the share of households educating every child.
//!    The simulated shares equal these probabilities by construction, so
//!    those moment gaps are exactly zero.
//! 2. `(theta1, alpha_gap)` minimise the unweighted sum of squared moment
//!    gaps, first on a coarse grid over the configured box, then by
//!    Nelder-Mead from the best grid point. The template and its ability
//!    draws stay fixed throughout.
//!
//! Standard errors use `Omega = (J' V^-1 J)^-1` with `V` the household
//! bootstrap covariance of the data moments and `J` a forward-difference
//! Jacobian of the simulated moments.

mod inference;
mod optimize;
mod simulate;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Theta;
use crate::moments::{compute_moment_vector, MomentVector, Stratum};
use crate::population::{AbilityDist, HouseholdRecord};
use crate::DEFAULT_Q_MAX;

pub use inference::{bootstrap_cov, bootstrap_moment_cov, jacobian, sandwich};
pub use optimize::{grid_search, nelder_mead, OptimResult};
pub use simulate::{conditional_sets, simulate_model_moments, usable_households, Template, TemplateHousehold};

fn d_s() -> usize {
    20
}
fn d_households() -> usize {
    2000
}
fn d_max_evals() -> usize {
    400
}
fn d_bootstrap() -> usize {
    200
}
fn d_h() -> f64 {
    1e-4
}
fn d_grid() -> usize {
    11
}
fn d_gap_bounds() -> [f64; 2] {
    [0.0, 0.05]
}
fn d_gamma() -> f64 {
    0.5
}
fn d_alpha_base() -> f64 {
    0.01
}
fn d_q_max() -> f64 {
    DEFAULT_Q_MAX
}
fn d_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    /// Ability draws per simulated household.
    #[serde(default = "d_s")]
    pub s: usize,
    /// Simulated households.
    #[serde(default = "d_households", alias = "H")]
    pub households: usize,
    /// Objective evaluations allowed to Nelder-Mead.
    #[serde(default = "d_max_evals")]
    pub max_evals: usize,
    /// Bootstrap replications for the moment covariance.
    #[serde(default = "d_bootstrap")]
    pub bootstrap: usize,
    /// Relative forward-difference step.
    #[serde(default = "d_h")]
    pub h: f64,
    #[serde(default = "d_grid")]
    pub grid: usize,
    /// Bounds on `theta1`; defaults to `[0, gamma)`.
    #[serde(default)]
    pub theta1_bounds: Option<[f64; 2]>,
    #[serde(default = "d_gap_bounds")]
    pub gap_bounds: [f64; 2],
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_alpha_base")]
    pub alpha_base: f64,
    #[serde(default)]
    pub ability: AbilityDist,
    #[serde(default = "d_q_max")]
    pub q_max: f64,
    /// Relative objective change below which the simplex counts as converged.
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s < 1 {
            return Err(Error::invalid("s", "must be at least 1"));
        }
        if self.households < 1 {
            return Err(Error::invalid("households", "must be at least 1"));
        }
        if self.bootstrap < 2 {
            return Err(Error::invalid("bootstrap", "must be at least 2"));
        }
        if !(self.h > 0.0) {
            return Err(Error::invalid("h", "must be positive"));
        }
        if self.grid < 2 {
            return Err(Error::invalid("grid", "needs at least 2 points per axis"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid("gamma", "must lie in (0, 1)"));
        }
        let [lo, hi] = self.theta1_bounds();
        if !(lo >= 0.0 && lo < hi && hi < self.gamma) {
            return Err(Error::invalid("theta1_bounds", format!("[{lo}, {hi}] must satisfy 0 <= lo < hi < gamma")));
        }
        let [glo, ghi] = self.gap_bounds;
        if !(glo.is_finite() && ghi.is_finite() && glo < ghi) {
            return Err(Error::invalid("gap_bounds", "need lo < hi"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol", "must be positive"));
        }
        self.ability.validate()
    }

    pub fn theta1_bounds(&self) -> [f64; 2] {
        self.theta1_bounds.unwrap_or([0.0, self.gamma * (1.0 - 1e-6)])
    }
}

/// Which parameters carry a standard error, in Jacobian column order.
const P_NAMES: [&str; 5] = ["theta1", "alpha_gap", "p1", "p_fb_d", "p_sb_d"];

fn set_param(theta: &mut Theta, name: &str, v: f64) {
    match name {
        "theta1" => theta.theta1 = v,
        "alpha_gap" => theta.alpha_gap = v,
        "p1" => theta.p1 = v,
        "p_fb_d" => theta.p_fb_d = v,
        "p_sb_d" => theta.p_sb_d = v,
        _ => unreachable!("unknown parameter {name}"),
    }
}

fn get_param(theta: &Theta, name: &str) -> f64 {
    match name {
        "theta1" => theta.theta1,
        "alpha_gap" => theta.alpha_gap,
        "p1" => theta.p1,
        "p_fb_d" => theta.p_fb_d,
        "p_sb_d" => theta.p_sb_d,
        _ => unreachable!("unknown parameter {name}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub moment: String,
    pub data: f64,
    pub model: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_data_households: usize,
    /// Households dropped because nobody received any schooling.
    pub n_zero_budget: usize,
    pub grid_evaluations: usize,
    pub optimizer_evaluations: usize,
    pub grid_best: [f64; 2],
    pub grid_best_value: f64,
    pub rel_change: f64,
    pub converged: bool,
    /// Probabilities read from data in stage one; the others keep defaults.
    pub stage_one: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub stratum: Stratum,
    pub theta_hat: Theta,
    pub objective_at_min: f64,
    pub data_moments: MomentVector,
    pub model_moments: MomentVector,
    pub moment_table: Vec<MomentRow>,
    pub moment_labels: Vec<String>,
    pub param_names: Vec<String>,
    #[serde(rename = "V")]
    pub v: Vec<Vec<f64>>,
    pub jacobian: Vec<Vec<f64>>,
    pub omega: Vec<Vec<f64>>,
    pub std_errors: BTreeMap<String, f64>,
    pub diagnostics: Diagnostics,
}

impl EstimationResult {
    pub fn se(&self, name: &str) -> Option<f64> {
        self.std_errors.get(name).copied()
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Sum of squared gaps over the labels of `data`.
pub fn moment_distance(data: &MomentVector, model: &MomentVector) -> Result<f64> {
    let labels = data.labels();
    let d = data.values();
    let m = model.values_at(&labels)?;
    Ok(d.iter().zip(&m).map(|(a, b)| (a - b).powi(2)).sum())
}

/// `Q(theta)` on a fixed template.
pub fn smm_objective(theta: &Theta, data_moments: &MomentVector, template: &Template) -> Result<f64> {
    moment_distance(data_moments, &simulate_model_moments(theta, template)?)
}

/// Estimate `theta` for `stratum` from observed households.
pub fn estimate_theta(data: &[HouseholdRecord], stratum: Stratum, cfg: &EstimationConfig) -> Result<EstimationResult> {
    cfg.validate()?;
    let usable = usable_households(data, stratum);
    let n_zero_budget = data.iter().filter(|h| stratum.contains(h)).count() - usable.len();
    if usable.is_empty() {
        return Err(Error::InsufficientData(format!("no usable households in stratum {stratum}")));
    }
    let owned: Vec<HouseholdRecord> = usable.iter().map(|h| (*h).clone()).collect();
    let data_m = compute_moment_vector(&owned, stratum)?;
    let labels = data_m.labels();
    let mut warnings = Vec::new();

    // stage one
    let mut theta = Theta {
        theta1: 0.0,
        alpha_gap: 0.0,
        p1: 0.5,
        p_fb_d: 0.5,
        p_sb_d: 0.5,
        gamma: cfg.gamma,
        alpha_base: cfg.alpha_base,
        ..Theta::default()
    };
    let n_all = usable.iter().filter(|h| h.educated().iter().all(|&e| e)).count();
    theta.p_high_aversion = n_all as f64 / usable.len() as f64;
    let mut stage_one = vec!["p_high_aversion".to_string()];
    let mut free_p: Vec<&str> = Vec::new();
    if stratum.n_c == 2 {
        for (name, v) in [("p1", data_m.m2), ("p_fb_d", data_m.m3), ("p_sb_d", data_m.m4)] {
            match v {
                Some(v) => {
                    set_param(&mut theta, name, v);
                    stage_one.push(name.to_string());
                    free_p.push(name);
                }
                None => warnings.push(format!("no one-educated households for {name}; kept at 0.5")),
            }
        }
    } else {
        warnings.push("three-child stratum: selection probabilities are not estimated".into());
    }

    // stage two
    let template = Template::from_data(data, stratum, cfg.households, cfg.s, &cfg.ability, cfg.q_max, cfg.seed)?;
    let [t_lo, t_hi] = cfg.theta1_bounds();
    let [g_lo, g_hi] = cfg.gap_bounds;
    let to_theta = |u: &[f64], base: &Theta| {
        let mut t = base.clone();
        t.theta1 = t_lo + u[0] * (t_hi - t_lo);
        t.alpha_gap = g_lo + u[1] * (g_hi - g_lo);
        t
    };
    let mut first_err: Option<Error> = None;
    let mut objective = |u: &[f64]| match smm_objective(&to_theta(u, &theta), &data_m, &template) {
        Ok(v) => v,
        Err(e) => {
            first_err.get_or_insert(e);
            f64::INFINITY
        }
    };
    let (u0, f0, grid_evals) = grid_search(&mut objective, 2, cfg.grid);
    let step = 0.5 / (cfg.grid - 1) as f64;
    let opt = nelder_mead(&mut objective, &u0, step, &[0.0, 0.0], &[1.0, 1.0], cfg.max_evals, 1e-7, cfg.tol);
    if let Some(e) = first_err {
        return Err(e);
    }
    let best = to_theta(&opt.x, &theta);
    if !opt.converged {
        return Err(Error::NonConvergence {
            iterations: opt.evaluations,
            message: format!("Nelder-Mead budget exhausted with relative objective change {:.3e}", opt.rel_change),
            best: vec![best.theta1, best.alpha_gap],
            best_value: opt.f,
        });
    }
    theta = best;
    let model_m = simulate_model_moments(&theta, &template)?;

    // inference
    let mut names: Vec<&str> = vec!["theta1", "alpha_gap"];
    names.extend(free_p.iter().copied());
    debug_assert!(names.iter().all(|n| P_NAMES.contains(n)));
    let x: Vec<f64> = names.iter().map(|n| get_param(&theta, n)).collect();
    let moment_fn = |x: &[f64]| {
        let mut t = theta.clone();
        for (n, v) in names.iter().zip(x) {
            set_param(&mut t, n, *v);
        }
        simulate_model_moments(&t, &template)?.values_at(&labels)
    };
    let jac = jacobian(moment_fn, &x, cfg.h)?;
    let v = bootstrap_moment_cov(&usable, stratum, &labels, cfg.bootstrap, cfg.seed)?;
    let (omega, pseudo) = sandwich(&jac, &v)?;
    if pseudo {
        warnings.push("moment covariance not positive definite; used a pseudo-inverse".into());
    }
    let mut std_errors = BTreeMap::new();
    for (i, n) in names.iter().enumerate() {
        std_errors.insert(n.to_string(), omega[(i, i)].max(0.0).sqrt());
    }
    let ph = theta.p_high_aversion;
    std_errors.insert("p_high_aversion".into(), (ph * (1.0 - ph) / usable.len() as f64).sqrt());

    let model_vals = model_m.values_at(&labels)?;
    let moment_table = labels
        .iter()
        .zip(data_m.values())
        .zip(&model_vals)
        .map(|((l, d), m)| MomentRow {
            moment: l.clone(),
            data: d,
            model: *m,
        })
        .collect();
    Ok(EstimationResult {
        stratum,
        objective_at_min: opt.f,
        data_moments: data_m,
        model_moments: model_m,
        moment_table,
        moment_labels: labels,
        param_names: names.iter().map(|s| s.to_string()).collect(),
        v: to_rows(&v),
        jacobian: to_rows(&jac),
        omega: to_rows(&omega),
        std_errors,
        diagnostics: Diagnostics {
            n_data_households: usable.len(),
            n_zero_budget,
            grid_evaluations: grid_evals,
            optimizer_evaluations: opt.evaluations,
            grid_best: [t_lo + u0[0] * (t_hi - t_lo), g_lo + u0[1] * (g_hi - g_lo)],
            grid_best_value: f0,
            rel_change: opt.rel_change,
            converged: opt.converged,
            stage_one,
            warnings,
        },
        theta_hat: theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ExtensiveMode, ParentEduc};
    use crate::population::{generate_population, simulate_population, BudgetSampler, PopulationConfig};
    use crate::rng::stream;
    use rand::Rng;

    fn planted() -> Theta {
        Theta {
            theta1: 0.02,
            alpha_gap: 0.002,
            p1: 0.37,
            p_fb_d: 0.11,
            p_sb_d: 0.32,
            ..Theta::default()
        }
    }

    fn data(theta: &Theta, n: usize, seed: u64) -> Vec<HouseholdRecord> {
        let cfg = PopulationConfig::two_child(n, ParentEduc::None, BudgetSampler::Uniform { low: 3.0, high: 15.0 }, seed);
        simulate_population(&generate_population(&cfg).unwrap(), theta, seed + 1, ExtensiveMode::Bernoulli).unwrap()
    }

    #[test]
    fn objective_zero_on_own_moments_and_quadratic() {
        let t = planted();
        let d = data(&t, 2000, 2);
        let st = Stratum::new(ParentEduc::None, 2);
        let tpl = Template::from_data(&d, st, 200, 2, &AbilityDist::default(), DEFAULT_Q_MAX, 0).unwrap();
        let m = simulate_model_moments(&t, &tpl).unwrap();
        assert_eq!(smm_objective(&t, &m, &tpl).unwrap(), 0.0);
        let mut shifted = m.clone();
        shifted.m1 += 0.5;
        assert!((smm_objective(&t, &shifted, &tpl).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn planted_theta_beats_perturbations() {
        // target moments from a large independent template, so only
        // simulation noise separates the planted point from its neighbours
        let t = planted();
        let d = data(&t, 20_000, 3);
        let st = Stratum::new(ParentEduc::None, 2);
        let target = Template::from_data(&d, st, 10_000, 20, &AbilityDist::default(), DEFAULT_Q_MAX, 9).unwrap();
        let dm = simulate_model_moments(&t, &target).unwrap();
        let tpl = Template::from_data(&d, st, 1000, 10, &AbilityDist::default(), DEFAULT_Q_MAX, 5).unwrap();
        let q0 = smm_objective(&t, &dm, &tpl).unwrap();
        let mut rng = stream(77, 0, 0);
        for _ in 0..20 {
            let mut p = t.clone();
            let s1: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let s2: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
            p.theta1 *= 1.0 + 0.1 * s1;
            p.alpha_gap *= 1.0 + 0.1 * s2;
            let q = smm_objective(&p, &dm, &tpl).unwrap();
            assert!(q > q0, "Q at planted {q0} vs perturbed {q}");
        }
    }

    #[test]
    fn config_defaults_and_unknown_keys() {
        let c = EstimationConfig::default();
        assert_eq!((c.s, c.households, c.grid), (20, 2000, 11));
        let c: EstimationConfig = serde_json::from_str(r#"{"H": 50, "s": 3}"#).unwrap();
        assert_eq!(c.households, 50);
        assert!(serde_json::from_str::<EstimationConfig>(r#"{"bogus": 1}"#).is_err());
        let c = EstimationConfig { bootstrap: 1, ..EstimationConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn small_estimation_runs() {
        let t = planted();
        let d = data(&t, 4000, 11);
        let st = Stratum::new(ParentEduc::None, 2);
        let cfg = EstimationConfig {
            households: 300,
            s: 4,
            bootstrap: 30,
            ..EstimationConfig::default()
        };
        let r = estimate_theta(&d, st, &cfg).unwrap();
        assert_eq!(r.theta_hat.p1, r.data_moments.m2.unwrap());
        assert_eq!(r.theta_hat.p_fb_d, r.data_moments.m3.unwrap());
        for row in &r.moment_table[1..4] {
            assert!((row.data - row.model).abs() < 1e-12);
        }
        assert!(r.std_errors.values().all(|s| s.is_finite() && *s >= 0.0));
        for i in 0..r.omega.len() {
            for j in 0..r.omega.len() {
                assert!((r.omega[i][j] - r.omega[j][i]).abs() <= 1e-12 * r.omega[i][i].abs().max(1e-30));
            }
        }
    }

    #[test]
    fn tiny_budget_reports_non_convergence() {
        let t = planted();
        let d = data(&t, 2000, 12);
        let st = Stratum::new(ParentEduc::None, 2);
        let cfg = EstimationConfig {
            households: 100,
            s: 2,
            bootstrap: 5,
            max_evals: 4,
            ..EstimationConfig::default()
        };
        match estimate_theta(&d, st, &cfg) {
            Err(e) => assert!(e.is_non_convergence()),
            Ok(r) => panic!("converged in {} evaluations", r.diagnostics.optimizer_evaluations),
        }
    }
}
