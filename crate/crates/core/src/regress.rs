//! OLS, household fixed-effects regressions and the attribution of
//! within-household inequality to gender, birth order and ability.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Composition;
use crate::population::HouseholdRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    #[serde(skip_serializing)]
    pub residuals: Vec<f64>,
    pub r_squared: f64,
    pub n_obs: usize,
    /// Number of fixed-effect groups, if any were absorbed.
    pub n_groups: Option<usize>,
}

impl RegressionResult {
    pub fn coef(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }

    pub fn se(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.std_errors[i])
    }
}

/// Least squares via Householder QR. `tss` is the total sum of squares used
/// for R² and `absorbed` the number of parameters already removed from the
/// data (fixed effects), which enters the residual degrees of freedom.
fn least_squares(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    names: &[String],
    tss: f64,
    absorbed: usize,
) -> Result<RegressionResult> {
    let (n, k) = x.shape();
    if n <= k + absorbed {
        return Err(Error::InsufficientData(format!(
            "{n} observations for {} parameters",
            k + absorbed
        )));
    }
    for (j, name) in names.iter().enumerate().take(k) {
        if x.column(j).iter().all(|v| v.abs() < 1e-12) {
            return Err(Error::Rank { regressor: name.clone() });
        }
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|j| x.column(j).norm()).fold(0.0, f64::max);
    for j in 0..k {
        if r[(j, j)].abs() <= 1e-10 * scale {
            return Err(Error::Rank {
                regressor: names[j].clone(),
            });
        }
    }
    let qty = qr.q().transpose() * y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Singular("triangular factor of the design matrix".into()))?;
    let resid = y - x * &beta;
    let rss = resid.norm_squared();
    let df = (n - k - absorbed) as f64;
    let sigma2 = rss / df;
    let rinv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Singular("triangular factor of the design matrix".into()))?;
    let cov = &rinv * rinv.transpose() * sigma2;
    Ok(RegressionResult {
        names: names.to_vec(),
        coefficients: beta.iter().copied().collect(),
        std_errors: (0..k).map(|j| cov[(j, j)].max(0.0).sqrt()).collect(),
        residuals: resid.iter().copied().collect(),
        r_squared: if tss > 0.0 { (1.0 - rss / tss).clamp(0.0, 1.0) } else { 0.0 },
        n_obs: n,
        n_groups: None,
    })
}

fn check_lengths(y: &[f64], regressors: &[(String, Vec<f64>)]) -> Result<()> {
    if let Some((name, _)) = regressors.iter().find(|(_, c)| c.len() != y.len()) {
        return Err(Error::invalid(name.clone(), "regressor length differs from outcome length"));
    }
    Ok(())
}

/// OLS of `y` on `regressors`, with an intercept named `const` if requested.
pub fn ols(y: &[f64], regressors: &[(String, Vec<f64>)], intercept: bool) -> Result<RegressionResult> {
    check_lengths(y, regressors)?;
    let n = y.len();
    let mut names: Vec<String> = Vec::new();
    let mut cols: Vec<&[f64]> = Vec::new();
    let ones = vec![1.0; n];
    if intercept {
        names.push("const".into());
        cols.push(&ones);
    }
    for (name, c) in regressors {
        names.push(name.clone());
        cols.push(c);
    }
    let x = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let yv = DVector::from_column_slice(y);
    let tss = if intercept {
        let m = y.iter().sum::<f64>() / n as f64;
        y.iter().map(|v| (v - m).powi(2)).sum()
    } else {
        yv.norm_squared()
    };
    least_squares(&yv, &x, &names, tss, 0)
}

fn group_index(groups: &[u64]) -> (Vec<usize>, usize) {
    let mut map: HashMap<u64, usize> = HashMap::new();
    let idx = groups
        .iter()
        .map(|g| {
            let next = map.len();
            *map.entry(*g).or_insert(next)
        })
        .collect();
    (idx, map.len())
}

fn demean(v: &[f64], idx: &[usize], n_groups: usize) -> Vec<f64> {
    let mut sum = vec![0.0; n_groups];
    let mut cnt = vec![0usize; n_groups];
    for (x, &g) in v.iter().zip(idx) {
        sum[g] += x;
        cnt[g] += 1;
    }
    v.iter().zip(idx).map(|(x, &g)| x - sum[g] / cnt[g] as f64).collect()
}

/// Household fixed effects by the within transformation: every variable is
/// demeaned by group, then OLS without intercept. Standard errors use the
/// degrees of freedom of the equivalent dummy-variable regression.
pub fn fe_regression(y: &[f64], regressors: &[(String, Vec<f64>)], groups: &[u64]) -> Result<RegressionResult> {
    check_lengths(y, regressors)?;
    if groups.len() != y.len() {
        return Err(Error::invalid("group_ids", "length differs from outcome length"));
    }
    let (idx, g) = group_index(groups);
    let yd = demean(y, &idx, g);
    let names: Vec<String> = regressors.iter().map(|(n, _)| n.clone()).collect();
    let cols: Vec<Vec<f64>> = regressors.iter().map(|(_, c)| demean(c, &idx, g)).collect();
    let n = y.len();
    let x = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let yv = DVector::from_vec(yd);
    let tss = yv.norm_squared();
    let mut res = least_squares(&yv, &x, &names, tss, g)?;
    res.n_groups = Some(g);
    Ok(res)
}

/// The same model with explicit group dummies; coefficients on the dummies
/// are appended after the regressors as `fe_<group>`.
pub fn dummy_regression(y: &[f64], regressors: &[(String, Vec<f64>)], groups: &[u64]) -> Result<RegressionResult> {
    check_lengths(y, regressors)?;
    let (idx, g) = group_index(groups);
    let mut ids = vec![0u64; g];
    for (&gid, &i) in groups.iter().zip(&idx) {
        ids[i] = gid;
    }
    let k = regressors.len();
    let n = y.len();
    let x = DMatrix::from_fn(n, k + g, |i, j| if j < k { regressors[j].1[i] } else { (idx[i] == j - k) as u8 as f64 });
    let mut names: Vec<String> = regressors.iter().map(|(n, _)| n.clone()).collect();
    names.extend(ids.iter().map(|id| format!("fe_{id}")));
    let yd = demean(y, &idx, g);
    let tss = yd.iter().map(|v| v * v).sum();
    let mut res = least_squares(&DVector::from_column_slice(y), &x, &names, tss, 0)?;
    res.n_groups = Some(g);
    Ok(res)
}

/// Which households enter a decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Margin {
    /// Every child educated; outcome is years.
    Intensive,
    /// At least one uneducated child; outcome is the educated indicator.
    Extensive,
    /// All households; outcome is years.
    All,
}

impl Margin {
    pub fn includes(&self, h: &HouseholdRecord) -> bool {
        let all = h.children.iter().all(|c| c.educ_years > 0.0);
        match self {
            Margin::Intensive => all,
            Margin::Extensive => !all,
            Margin::All => true,
        }
    }

    fn outcome(&self, years: f64) -> f64 {
        match self {
            Margin::Extensive => (years > 0.0) as u8 as f64,
            _ => years,
        }
    }
}

impl std::str::FromStr for Margin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intensive" => Ok(Margin::Intensive),
            "extensive" => Ok(Margin::Extensive),
            "all" => Ok(Margin::All),
            _ => Err(Error::invalid("margin", format!("`{s}` is not intensive, extensive or all"))),
        }
    }
}

/// Child-level panel: outcome plus `female`, `firstborn` and their product.
pub struct ChildPanel {
    pub y: Vec<f64>,
    pub regressors: Vec<(String, Vec<f64>)>,
    pub groups: Vec<u64>,
}

pub fn child_panel(pop: &[HouseholdRecord], margin: Margin) -> ChildPanel {
    let mut y = Vec::new();
    let (mut f, mut fb, mut fx) = (Vec::new(), Vec::new(), Vec::new());
    let mut groups = Vec::new();
    for h in pop.iter().filter(|h| margin.includes(h)) {
        for c in &h.children {
            let female = c.female as u8 as f64;
            let first = (c.birth_order == 1) as u8 as f64;
            y.push(margin.outcome(c.educ_years));
            f.push(female);
            fb.push(first);
            fx.push(female * first);
            groups.push(h.household_id);
        }
    }
    ChildPanel {
        y,
        regressors: vec![
            ("female".into(), f),
            ("firstborn".into(), fb),
            ("female_x_firstborn".into(), fx),
        ],
        groups,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffResult {
    pub gender_effect: f64,
    pub birth_effect: f64,
    /// Mean daughter-minus-son gap with a firstborn daughter.
    pub blue: f64,
    /// Mean daughter-minus-son gap with a firstborn son.
    pub red: f64,
    pub blue_se: f64,
    pub red_se: f64,
    pub n_blue: usize,
    pub n_red: usize,
}

/// Gender and birth-order effects from two cell means: with a firstborn
/// daughter the gap carries both effects, with a firstborn son it carries the
/// gender effect minus the birth-order effect.
pub fn combine_effects(blue: f64, red: f64) -> (f64, f64) {
    (0.5 * (blue + red), 0.5 * (blue - red))
}

/// Daughter-minus-son gaps in mixed two-child households.
pub fn diff_regression(pop: &[HouseholdRecord]) -> Result<DiffResult> {
    let (mut blue, mut red) = (Vec::new(), Vec::new());
    for h in pop.iter().filter(|h| h.n_children() == 2) {
        let g = h.genders();
        if let Composition::Mixed { firstborn_female } = Composition::from_genders(&g) {
            let y = h.years();
            let (d, s) = if firstborn_female { (y[0], y[1]) } else { (y[1], y[0]) };
            if firstborn_female {
                blue.push(d - s);
            } else {
                red.push(d - s);
            }
        }
    }
    let mut missing = Vec::new();
    if blue.is_empty() {
        missing.push("mixed_firstborn_daughter".to_string());
    }
    if red.is_empty() {
        missing.push("mixed_firstborn_son".to_string());
    }
    if !missing.is_empty() {
        return Err(Error::EmptyCell(missing));
    }
    let mean_se = |v: &[f64]| {
        let m = crate::stats::mean(v);
        let se = if v.len() > 1 {
            (crate::stats::sample_variance(v) / v.len() as f64).sqrt()
        } else {
            f64::NAN
        };
        (m, se)
    };
    let (b, bse) = mean_se(&blue);
    let (r, rse) = mean_se(&red);
    let (gender_effect, birth_effect) = combine_effects(b, r);
    Ok(DiffResult {
        gender_effect,
        birth_effect,
        blue: b,
        red: r,
        blue_se: bse,
        red_se: rse,
        n_blue: blue.len(),
        n_red: red.len(),
    })
}

/// Shares of average within-household inequality, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionShares {
    pub gender_share: f64,
    pub birth_order_share: f64,
    pub ability_share: f64,
    pub margin: Margin,
    /// Mean within-household range of the outcome.
    pub inequality: f64,
    pub gender_raw: f64,
    pub birth_order_raw: f64,
    pub ability_raw: f64,
    /// True if the unexplained remainder was negative and set to zero.
    pub clamped: bool,
    pub n_households: usize,
    pub regression: RegressionResult,
}

/// Attribute the mean within-household range `I` of the outcome.
///
/// With FE coefficients `b1` (female), `b2` (firstborn) and `b3` (product):
/// gender gets `|b1 + b3 s| * m`, where `s` is the share of daughters in
/// mixed households who are firstborn and `m` the share of mixed households;
/// birth order gets `|b2|`; ability gets the remainder `I - gender - birth`,
/// floored at zero. The three parts are then scaled to sum to 100.
pub fn decomposition_shares(pop: &[HouseholdRecord], margin: Margin) -> Result<DecompositionShares> {
    let sub: Vec<&HouseholdRecord> = pop.iter().filter(|h| margin.includes(h) && h.n_children() >= 2).collect();
    if sub.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} households in the {margin:?} subpopulation",
            sub.len()
        )));
    }
    let owned: Vec<HouseholdRecord> = sub.iter().map(|h| (*h).clone()).collect();
    let panel = child_panel(&owned, margin);
    let reg = fe_regression(&panel.y, &panel.regressors, &panel.groups)?;
    let b = &reg.coefficients;

    let mut inequality = 0.0;
    let mut mixed = 0usize;
    let (mut daughters, mut fb_daughters) = (0usize, 0usize);
    for h in &owned {
        let y: Vec<f64> = h.children.iter().map(|c| margin.outcome(c.educ_years)).collect();
        let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = y.iter().copied().fold(f64::INFINITY, f64::min);
        inequality += max - min;
        if !Composition::from_genders(&h.genders()).is_same_gender() {
            mixed += 1;
            for c in h.children.iter().filter(|c| c.female) {
                daughters += 1;
                fb_daughters += (c.birth_order == 1) as usize;
            }
        }
    }
    let n = owned.len() as f64;
    inequality /= n;
    let s_fb = if daughters > 0 { fb_daughters as f64 / daughters as f64 } else { 0.0 };
    let gender_raw = (b[0] + b[2] * s_fb).abs() * mixed as f64 / n;
    let birth_raw = b[1].abs();
    let rem = inequality - gender_raw - birth_raw;
    let clamped = rem < 0.0;
    let ability_raw = rem.max(0.0);
    let total = gender_raw + birth_raw + ability_raw;
    if !(total > 0.0) {
        return Err(Error::InsufficientData("no within-household inequality to decompose".into()));
    }
    let gender_share = 100.0 * gender_raw / total;
    let birth_order_share = 100.0 * birth_raw / total;
    Ok(DecompositionShares {
        gender_share,
        birth_order_share,
        ability_share: 100.0 - gender_share - birth_order_share,
        margin,
        inequality,
        gender_raw,
        birth_order_raw: birth_raw,
        ability_raw,
        clamped,
        n_households: owned.len(),
        regression: reg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    type Planted = (Vec<f64>, Vec<(String, Vec<f64>)>, Vec<u64>);

    fn planted(n_house: usize, seed: u64) -> Planted {
        let mut rng = stream(seed, 0, 0);
        let (mut y, mut f, mut fb, mut g) = (vec![], vec![], vec![], vec![]);
        for h in 0..n_house {
            let fe: f64 = 10.0 + 3.0 * rng.sample::<f64, _>(StandardNormal);
            for k in 0..3 {
                let female = rng.random::<bool>() as u8 as f64;
                let first = (k == 0) as u8 as f64;
                let e: f64 = StandardNormal.sample(&mut rng);
                y.push(fe - 3.0 * female - 1.0 * first + 0.8 * e);
                f.push(female);
                fb.push(first);
                g.push(h as u64 + 100);
            }
        }
        (y, vec![("female".into(), f), ("firstborn".into(), fb)], g)
    }

    #[test]
    fn ols_exact_fit() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 0.5 * v).collect();
        let r = ols(&y, &[("x".into(), x)], true).unwrap();
        assert!((r.coef("const").unwrap() - 2.0).abs() < 1e-12);
        assert!((r.coef("x").unwrap() - 0.5).abs() < 1e-12);
        assert!((r.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn within_equals_dummies() {
        let (y, x, g) = planted(50, 1);
        let fe = fe_regression(&y, &x, &g).unwrap();
        let dv = dummy_regression(&y, &x, &g).unwrap();
        for j in 0..2 {
            assert!((fe.coefficients[j] - dv.coefficients[j]).abs() < 1e-8);
            assert!((fe.std_errors[j] - dv.std_errors[j]).abs() < 1e-8);
        }
        for (a, b) in fe.residuals.iter().zip(&dv.residuals) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn planted_effects_recovered() {
        let (y, x, g) = planted(50, 2);
        let fe = fe_regression(&y, &x, &g).unwrap();
        assert!((fe.coefficients[0] + 3.0).abs() < 2.0 * fe.std_errors[0], "{fe:?}");
        assert!((fe.coefficients[1] + 1.0).abs() < 2.0 * fe.std_errors[1], "{fe:?}");
    }

    #[test]
    fn residuals_orthogonal() {
        let (y, x, g) = planted(40, 3);
        let fe = fe_regression(&y, &x, &g).unwrap();
        let (idx, ng) = group_index(&g);
        for (_, col) in &x {
            let d = demean(col, &idx, ng);
            let dot: f64 = d.iter().zip(&fe.residuals).map(|(a, b)| a * b).sum();
            assert!(dot.abs() < 1e-8);
        }
        assert!((0.0..=1.0).contains(&fe.r_squared));
    }

    #[test]
    fn constant_within_groups_gives_zero() {
        let (_, x, g) = planted(20, 4);
        let y: Vec<f64> = g.iter().map(|&h| h as f64).collect();
        let fe = fe_regression(&y, &x, &g).unwrap();
        assert!(fe.coefficients.iter().all(|c| c.abs() < 1e-10));
    }

    #[test]
    fn rank_error_names_regressor() {
        let (y, mut x, g) = planted(20, 5);
        x.push(("hh_level".into(), g.iter().map(|&h| (h % 2) as f64).collect()));
        match fe_regression(&y, &x, &g) {
            Err(Error::Rank { regressor }) => assert_eq!(regressor, "hh_level"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn combination_identity() {
        assert_eq!(combine_effects(-4.0, -2.0), (-3.0, -1.0));
        let (g, b) = combine_effects(1.7, -0.3);
        assert!((g + b - 1.7).abs() < 1e-15 && (g - b + 0.3).abs() < 1e-15);
    }
}
