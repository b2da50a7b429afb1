//! Recovery of relative abilities from observed two-child allocations.
//!
//! At an interior optimum the first-order condition is linear in `a1` once
//! `a2 = 1 - a1` is substituted:
//! `a1 = (D2 + alpha1 - alpha2) / (D1 + D2)` with `D_i = delta_i q_i^(delta_i - 1)`.
//! Corners (a child at the cap) only bound `a1`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{child_params, solve_allocation, HouseholdSpec, Theta};
use crate::population::HouseholdRecord;
use crate::stats::{ks_statistic_sorted, ks_two_sample_pvalue, sorted};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredAbility {
    pub household_id: u64,
    pub a_hat: Vec<f64>,
    /// Largest gap in years between the observed split and the split solved
    /// at `a_hat`.
    pub residual: f64,
}

/// Relative abilities that make `(q1, q2)` optimal for `hh` at `theta`.
/// `hh` supplies genders, `q_max` and the budget `q1 + q2`.
pub fn recover_ability_pair(q1: f64, q2: f64, hh: &HouseholdSpec, theta: &Theta) -> Result<RecoveredAbility> {
    if hh.n_children() != 2 {
        return Err(Error::UnsupportedFamilySize(hh.n_children()));
    }
    if !(q1 > 0.0 && q2 > 0.0) {
        return Err(Error::invalid("educ_years", "both children must be educated for recovery"));
    }
    let q_max = hh.q_max;
    let mut probe = hh.clone();
    probe.q_total = q1 + q2;
    probe.set_abilities(&[0.5, 0.5]);
    let p = child_params(&probe, theta);
    let a_foc = |x: f64, y: f64| {
        let d1 = p[0].delta * x.powf(p[0].delta - 1.0);
        let d2 = p[1].delta * y.powf(p[1].delta - 1.0);
        (d2 + p[0].alpha - p[1].alpha) / (d1 + d2)
    };
    let cap_tol = 1e-9;
    let at_cap1 = q1 >= q_max - cap_tol;
    let at_cap2 = q2 >= q_max - cap_tol;
    if at_cap1 || at_cap2 {
        let (lower, upper) = match (at_cap1, at_cap2) {
            (true, true) => (0.0, 1.0),
            (true, false) => (a_foc(q_max, q2).clamp(0.0, 1.0), 1.0),
            _ => (0.0, a_foc(q1, q_max).clamp(0.0, 1.0)),
        };
        return Err(Error::Corner { lower, upper });
    }
    let a1 = a_foc(q1, q2);
    if !(a1 > 0.0 && a1 < 1.0) {
        return Err(Error::Infeasible(format!(
            "split ({q1}, {q2}) is not optimal for any relative ability in (0, 1)"
        )));
    }
    probe.set_abilities(&[a1, 1.0 - a1]);
    let alloc = solve_allocation(&probe, theta, &[true, true])?;
    let residual = (alloc.q[0] - q1).abs().max((alloc.q[1] - q2).abs());
    Ok(RecoveredAbility {
        household_id: 0,
        a_hat: vec![a1, 1.0 - a1],
        residual,
    })
}

/// One row of the recovery export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub household_id: u64,
    pub a1_hat: Option<f64>,
    pub a2_hat: Option<f64>,
    pub residual: Option<f64>,
    pub corner_flag: u8,
}

/// Recover every two-child household with both children educated.
/// Corner households are flagged with empty estimates.
pub fn recover_population(pop: &[HouseholdRecord], theta: &Theta, q_max: f64) -> Result<Vec<RecoveryRow>> {
    theta.validate()?;
    pop.par_iter()
        .filter(|h| h.n_children() == 2 && h.educated().iter().all(|&e| e))
        .map(|h| {
            let spec = h.to_spec(q_max);
            let y = h.years();
            match recover_ability_pair(y[0], y[1], &spec, theta) {
                Ok(r) => Ok(RecoveryRow {
                    household_id: h.household_id,
                    a1_hat: Some(r.a_hat[0]),
                    a2_hat: Some(r.a_hat[1]),
                    residual: Some(r.residual),
                    corner_flag: 0,
                }),
                Err(Error::Corner { .. }) | Err(Error::Infeasible(_)) => Ok(RecoveryRow {
                    household_id: h.household_id,
                    a1_hat: None,
                    a2_hat: None,
                    residual: None,
                    corner_flag: 1,
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

pub fn write_recovery<W: Write>(writer: W, rows: &[RecoveryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Point estimates of `a1` from a recovery export, for reuse as an
/// empirical ability law.
pub fn read_recovered_abilities<R: std::io::Read>(reader: R) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: RecoveryRow = row?;
        if let Some(a) = r.a1_hat {
            out.push(a);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsComparison {
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

impl KsComparison {
    fn of(a: &[f64], b: &[f64]) -> KsComparison {
        let d = ks_statistic_sorted(&sorted(a), &sorted(b));
        KsComparison {
            statistic: d,
            p_value: ks_two_sample_pvalue(d, a.len(), b.len()),
            n1: a.len(),
            n2: b.len(),
        }
    }
}

/// Distribution of recovered abilities by gender and birth order.
///
/// Both comparisons use one child per household so the samples are
/// independent: gender compares the firstborn's `a_hat` between households
/// with a firstborn daughter and a firstborn son; birth order compares
/// `a1_hat` from odd-positioned households with `a2_hat` from even ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbilityDiagnostics {
    pub n_recovered: usize,
    pub n_corner: usize,
    pub gender: KsComparison,
    pub birth_order: KsComparison,
    pub firstborn_daughters: Vec<f64>,
    pub firstborn_sons: Vec<f64>,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

pub fn ability_diagnostics(pop: &[HouseholdRecord], theta: &Theta, q_max: f64) -> Result<AbilityDiagnostics> {
    let rows = recover_population(pop, theta, q_max)?;
    let gender_of: std::collections::HashMap<u64, bool> =
        pop.iter().map(|h| (h.household_id, h.children[0].female)).collect();
    let ok: Vec<&RecoveryRow> = rows.iter().filter(|r| r.corner_flag == 0).collect();
    if ok.len() < 30 {
        return Err(Error::InsufficientData(format!(
            "{} recoverable households, need at least 30",
            ok.len()
        )));
    }
    let (mut fd, mut fs) = (Vec::new(), Vec::new());
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for (k, r) in ok.iter().enumerate() {
        let a1 = r.a1_hat.unwrap();
        if gender_of[&r.household_id] {
            fd.push(a1);
        } else {
            fs.push(a1);
        }
        if k % 2 == 0 {
            first.push(a1);
        } else {
            second.push(r.a2_hat.unwrap());
        }
    }
    if fd.is_empty() || fs.is_empty() {
        return Err(Error::EmptyCell(vec!["firstborn daughter or firstborn son".into()]));
    }
    Ok(AbilityDiagnostics {
        n_recovered: ok.len(),
        n_corner: rows.len() - ok.len(),
        gender: KsComparison::of(&fd, &fs),
        birth_order: KsComparison::of(&first, &second),
        firstborn_daughters: fd,
        firstborn_sons: fs,
        first,
        second,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ExtensiveMode, ParentEduc};
    use crate::population::{generate_population, simulate_population, BudgetSampler, PopulationConfig};

    #[test]
    fn symmetric_recovery() {
        let t = Theta {
            theta1: 0.0,
            alpha_gap: 0.0,
            ..Theta::default()
        };
        let hh = HouseholdSpec::pair([true, false], [0.5, 0.5], 20.0);
        let r = recover_ability_pair(10.0, 10.0, &hh, &t).unwrap();
        assert!((r.a_hat[0] - 0.5).abs() < 1e-12);
        assert!(r.residual < 1e-6);
    }

    #[test]
    fn corner_is_set_identified() {
        let t = Theta::default();
        let hh = HouseholdSpec::pair([false, true], [0.5, 0.5], 30.0);
        match recover_ability_pair(21.0, 9.0, &hh, &t) {
            Err(Error::Corner { lower, upper }) => assert!(lower > 0.5 && upper == 1.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn roundtrip_through_solver() {
        let t = Theta::default();
        for &(a1, f) in &[(0.43, [true, false]), (0.57, [false, true]), (0.5, [true, true])] {
            let hh = HouseholdSpec::pair(f, [a1, 1.0 - a1], 14.0);
            let q = solve_allocation(&hh, &t, &[true, true]).unwrap().q;
            let r = recover_ability_pair(q[0], q[1], &hh, &t).unwrap();
            assert!((r.a_hat[0] - a1).abs() < 1e-6, "{} vs {a1}", r.a_hat[0]);
        }
    }

    #[test]
    fn monotone_in_q1() {
        let t = Theta::default();
        let hh = HouseholdSpec::pair([true, false], [0.5, 0.5], 16.0);
        let mut prev = 0.0;
        for k in 1..32 {
            let q1 = k as f64 * 0.5;
            let a = recover_ability_pair(q1, 16.0 - q1, &hh, &t).map(|r| r.a_hat[0]).unwrap_or(prev);
            assert!(a >= prev);
            prev = a;
        }
    }

    fn population(theta: &Theta, seed: u64) -> Vec<HouseholdRecord> {
        let mut cfg = PopulationConfig::two_child(4000, ParentEduc::None, BudgetSampler::Uniform { low: 4.0, high: 10.0 }, seed);
        cfg.gender_comp_weights = [("ds".to_string(), 0.5), ("sd".to_string(), 0.5)].into_iter().collect();
        let mut t = theta.clone();
        t.p_high_aversion = 1.0;
        simulate_population(&generate_population(&cfg).unwrap(), &t, seed, ExtensiveMode::Bernoulli).unwrap()
    }

    #[test]
    fn misspecified_theta_separates_genders() {
        let t = Theta::default();
        let pop = population(&t, 21);
        let right = ability_diagnostics(&pop, &t, 21.0).unwrap();
        let wrong = Theta {
            theta1: t.theta1 + 0.05,
            ..t.clone()
        };
        let bad = ability_diagnostics(&pop, &wrong, 21.0).unwrap();
        assert!(bad.gender.statistic > right.gender.statistic);
        assert!(right.gender.p_value > 0.001);
    }

    #[test]
    fn diagnostics_need_enough_households() {
        let t = Theta::default();
        let pop: Vec<HouseholdRecord> = population(&t, 3).into_iter().take(10).collect();
        assert!(matches!(ability_diagnostics(&pop, &t, 21.0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn export_roundtrip() {
        let t = Theta::default();
        let pop: Vec<HouseholdRecord> = population(&t, 4).into_iter().take(50).collect();
        let rows = recover_population(&pop, &t, 21.0).unwrap();
        let mut buf = Vec::new();
        write_recovery(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("household_id,a1_hat,a2_hat,residual,corner_flag"));
        let a = read_recovered_abilities(buf.as_slice()).unwrap();
        assert_eq!(a.len(), rows.iter().filter(|r| r.corner_flag == 0).count());
    }
}
