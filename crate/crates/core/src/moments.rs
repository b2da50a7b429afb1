//! Inequality statistics and the matched moment vector.
//!
//! Moments, per stratum (parent education and family size):
//!
//! * `m1`: mean years of daughters in only-daughter households minus the mean
//!   for daughters in mixed households (uneducated daughters count as zero).
//! * `m2`: among same-gender households with exactly one educated child, the
//!   share where that child is the firstborn.
//! * `m3`, `m4`: among mixed households with a firstborn daughter (`m3`) or
//!   a firstborn son (`m4`) and exactly one educated child, the share where
//!   that child is a daughter.
//! * `m_birth`: for only-daughter and only-son households with every child
//!   educated, the mean difference in years between adjacent birth ranks.
//!
//! A child counts as educated when `educ_years > 0`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Composition, ParentEduc};
use crate::population::HouseholdRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Stratum {
    pub parent_educ: ParentEduc,
    pub n_c: usize,
}

impl Stratum {
    pub fn new(parent_educ: ParentEduc, n_c: usize) -> Self {
        Stratum { parent_educ, n_c }
    }

    pub fn contains(&self, h: &HouseholdRecord) -> bool {
        h.parent_educ == self.parent_educ && h.n_children() == self.n_c
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.parent_educ, self.n_c)
    }
}

/// Every stratum present in `pop`, sorted.
pub fn strata(pop: &[HouseholdRecord]) -> Vec<Stratum> {
    let mut s: Vec<Stratum> = pop.iter().map(|h| Stratum::new(h.parent_educ, h.n_children())).collect();
    s.sort();
    s.dedup();
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    pub stratum: Stratum,
    pub m1: f64,
    /// `None` when no household in the cell has exactly one educated child.
    pub m2: Option<f64>,
    pub m3: Option<f64>,
    pub m4: Option<f64>,
    /// `(label, value)` pairs, e.g. `("birth_dd_1_2", 0.4)`.
    pub m_birth: Vec<(String, f64)>,
    /// Households per composition cell and per one-educated share cell.
    pub counts: BTreeMap<String, usize>,
}

impl MomentVector {
    /// Labelled components present in this vector, in a fixed order.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let mut out = vec![("m1".to_string(), self.m1)];
        for (name, v) in [("m2", self.m2), ("m3", self.m3), ("m4", self.m4)] {
            if let Some(v) = v {
                out.push((name.to_string(), v));
            }
        }
        out.extend(self.m_birth.iter().cloned());
        out
    }

    pub fn labels(&self) -> Vec<String> {
        self.entries().into_iter().map(|(l, _)| l).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries().into_iter().map(|(_, v)| v).collect()
    }

    /// Values at `labels`; errors if a label is missing.
    pub fn values_at(&self, labels: &[String]) -> Result<Vec<f64>> {
        let e = self.entries();
        labels
            .iter()
            .map(|l| {
                e.iter()
                    .find(|(k, _)| k == l)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| Error::invalid("moments", format!("moment `{l}` is not available")))
            })
            .collect()
    }
}

/// Weighted running sums behind [`MomentVector`]. Simulated households enter
/// with fractional weights when extensive types are integrated out.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    n_c: usize,
    dd_daughters: (f64, f64),
    mixed_daughters: (f64, f64),
    share_same: (f64, f64),
    share_fbd: (f64, f64),
    share_fbs: (f64, f64),
    birth: [Vec<(f64, f64)>; 2],
    counts: BTreeMap<String, usize>,
}

impl MomentAccumulator {
    pub fn new(n_c: usize) -> Self {
        let k = n_c.saturating_sub(1);
        MomentAccumulator {
            n_c,
            dd_daughters: (0.0, 0.0),
            mixed_daughters: (0.0, 0.0),
            share_same: (0.0, 0.0),
            share_fbd: (0.0, 0.0),
            share_fbs: (0.0, 0.0),
            birth: [vec![(0.0, 0.0); k], vec![(0.0, 0.0); k]],
            counts: BTreeMap::new(),
        }
    }

    fn cell(female: &[bool]) -> &'static str {
        match Composition::from_genders(female) {
            Composition::OnlyDaughters => "only_daughters",
            Composition::OnlySons => "only_sons",
            Composition::Mixed { firstborn_female: true } => "mixed_firstborn_daughter",
            Composition::Mixed { firstborn_female: false } => "mixed_firstborn_son",
        }
    }

    /// Count a household towards its composition cell. Call once per
    /// observed (or template) household, independently of [`Self::add`].
    pub fn count_household(&mut self, female: &[bool]) {
        *self.counts.entry(Self::cell(female).to_string()).or_default() += 1;
    }

    /// Add outcome `years` with weight `w`.
    pub fn add(&mut self, female: &[bool], years: &[f64], w: f64) {
        debug_assert_eq!(female.len(), self.n_c);
        let comp = Composition::from_genders(female);
        let educated: Vec<bool> = years.iter().map(|&y| y > 0.0).collect();
        let n_educ = educated.iter().filter(|&&e| e).count();
        let daughters = female.iter().zip(years).filter(|(f, _)| **f);
        match comp {
            Composition::OnlyDaughters => {
                for (_, y) in daughters {
                    self.dd_daughters.0 += w * y;
                    self.dd_daughters.1 += w;
                }
            }
            Composition::Mixed { .. } => {
                for (_, y) in daughters {
                    self.mixed_daughters.0 += w * y;
                    self.mixed_daughters.1 += w;
                }
            }
            Composition::OnlySons => {}
        }
        if n_educ == 1 {
            let k = educated.iter().position(|&e| e).unwrap();
            let (cell, hit) = match comp {
                Composition::OnlyDaughters | Composition::OnlySons => (&mut self.share_same, k == 0),
                Composition::Mixed { firstborn_female: true } => (&mut self.share_fbd, female[k]),
                Composition::Mixed { firstborn_female: false } => (&mut self.share_fbs, female[k]),
            };
            cell.0 += w * hit as u8 as f64;
            cell.1 += w;
        }
        if n_educ == self.n_c {
            let slot = match comp {
                Composition::OnlyDaughters => Some(0),
                Composition::OnlySons => Some(1),
                Composition::Mixed { .. } => None,
            };
            if let Some(s) = slot {
                for (j, acc) in self.birth[s].iter_mut().enumerate() {
                    acc.0 += w * (years[j] - years[j + 1]);
                    acc.1 += w;
                }
            }
        }
    }

    /// Finish. `strict` requires every composition cell and every
    /// birth-order cell to be nonempty; otherwise empty birth-order cells are
    /// left out. `m1` always needs daughters in both kinds of household.
    pub fn finish(&self, stratum: Stratum, strict: bool) -> Result<MomentVector> {
        let mut missing = Vec::new();
        if strict {
            for cell in ["only_daughters", "only_sons", "mixed_firstborn_daughter", "mixed_firstborn_son"] {
                if self.counts.get(cell).copied().unwrap_or(0) == 0 {
                    missing.push(format!("{stratum}:{cell}"));
                }
            }
        }
        let ratio = |(s, w): (f64, f64)| if w > 0.0 { Some(s / w) } else { None };
        let dd = ratio(self.dd_daughters);
        let mixed = ratio(self.mixed_daughters);
        if dd.is_none() || mixed.is_none() {
            if dd.is_none() {
                missing.push(format!("{stratum}:only_daughters"));
            }
            if mixed.is_none() {
                missing.push(format!("{stratum}:mixed"));
            }
        }
        let mut m_birth = Vec::new();
        for (s, code) in [(0usize, 'd'), (1, 's')] {
            let tag: String = std::iter::repeat_n(code, self.n_c).collect();
            for (j, acc) in self.birth[s].iter().enumerate() {
                match ratio(*acc) {
                    Some(v) => m_birth.push((format!("birth_{tag}_{}_{}", j + 1, j + 2), v)),
                    None if strict => missing.push(format!("{stratum}:{tag} all educated")),
                    None => {}
                }
            }
        }
        if !missing.is_empty() {
            missing.dedup();
            return Err(Error::EmptyCell(missing));
        }
        let mut counts = self.counts.clone();
        counts.insert("one_educated_same_gender".into(), self.share_same.1.round() as usize);
        counts.insert("one_educated_firstborn_daughter".into(), self.share_fbd.1.round() as usize);
        counts.insert("one_educated_firstborn_son".into(), self.share_fbs.1.round() as usize);
        Ok(MomentVector {
            stratum,
            m1: dd.unwrap() - mixed.unwrap(),
            m2: ratio(self.share_same),
            m3: ratio(self.share_fbd),
            m4: ratio(self.share_fbs),
            m_birth,
            counts,
        })
    }
}

/// Moment vector of the households of `stratum` in `pop`.
pub fn compute_moment_vector(pop: &[HouseholdRecord], stratum: Stratum) -> Result<MomentVector> {
    let mut acc = MomentAccumulator::new(stratum.n_c);
    for h in pop.iter().filter(|h| stratum.contains(h)) {
        let female = h.genders();
        acc.count_household(&female);
        acc.add(&female, &h.years(), 1.0);
    }
    acc.finish(stratum, true)
}

/// Like [`compute_moment_vector`] but only `m1` is required; components
/// whose cells are empty are left out.
pub fn compute_moment_vector_lenient(pop: &[HouseholdRecord], stratum: Stratum) -> Result<MomentVector> {
    let mut acc = MomentAccumulator::new(stratum.n_c);
    for h in pop.iter().filter(|h| stratum.contains(h)) {
        let female = h.genders();
        acc.count_household(&female);
        acc.add(&female, &h.years(), 1.0);
    }
    acc.finish(stratum, false)
}

/// Moment vectors for every stratum of `pop`, keyed by its display label.
/// Strata where `m1` is not computable are reported in the second map.
pub fn moments_by_stratum(pop: &[HouseholdRecord]) -> (BTreeMap<String, MomentVector>, BTreeMap<String, String>) {
    let mut ok = BTreeMap::new();
    let mut err = BTreeMap::new();
    for s in strata(pop) {
        match compute_moment_vector_lenient(pop, s) {
            Ok(m) => {
                ok.insert(s.to_string(), m);
            }
            Err(e) => {
                err.insert(s.to_string(), e.to_string());
            }
        }
    }
    (ok, err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityStats {
    /// Child-weighted mean of within-household variances.
    pub within_var_mean: f64,
    /// Child-weighted variance of household means.
    pub between_var: f64,
    pub total_var: f64,
    pub within_share: f64,
    pub mean_range: f64,
    pub mean_sd: f64,
    pub n_households: usize,
    pub n_children: usize,
}

/// Per-household dispersion summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdInequality {
    pub household_id: u64,
    pub range: f64,
    pub sd: f64,
    pub q_bar: f64,
    pub q_total: f64,
}

fn household_inequality(hid: u64, years: &[f64]) -> HouseholdInequality {
    let n = years.len() as f64;
    let total: f64 = years.iter().sum();
    let mean = total / n;
    let var = years.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    let max = years.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = years.iter().copied().fold(f64::INFINITY, f64::min);
    HouseholdInequality {
        household_id: hid,
        range: max - min,
        sd: var.sqrt(),
        q_bar: mean,
        q_total: total,
    }
}

pub fn inequality_stats(pop: &[HouseholdRecord]) -> Vec<HouseholdInequality> {
    pop.iter()
        .filter(|h| h.n_children() > 0)
        .map(|h| household_inequality(h.household_id, &h.years()))
        .collect()
}

/// `Var(q) = E_h Var(q | h) + Var_h E[q | h]` over children, population
/// (divide-by-n) convention, households weighted by their number of children.
pub fn variance_decomposition(pop: &[HouseholdRecord]) -> Result<InequalityStats> {
    if pop.len() < 2 {
        return Err(Error::InsufficientData("variance decomposition needs at least 2 households".into()));
    }
    if let Some(h) = pop.iter().find(|h| h.n_children() < 2) {
        return Err(Error::Household {
            household_id: h.household_id,
            message: "needs at least 2 children for a within-household variance".into(),
        });
    }
    let per: Vec<HouseholdInequality> = inequality_stats(pop);
    let n_children: usize = pop.iter().map(|h| h.n_children()).sum();
    let nc = n_children as f64;
    let grand = pop.iter().map(|h| h.q_total()).sum::<f64>() / nc;
    let mut within = 0.0;
    let mut between = 0.0;
    let mut total = 0.0;
    for (h, s) in pop.iter().zip(&per) {
        let w = h.n_children() as f64 / nc;
        within += w * s.sd * s.sd;
        between += w * (s.q_bar - grand).powi(2);
        total += h.years().iter().map(|y| (y - grand).powi(2)).sum::<f64>();
    }
    total /= nc;
    let k = per.len() as f64;
    Ok(InequalityStats {
        within_var_mean: within,
        between_var: between,
        total_var: total,
        within_share: if total > 0.0 { (within / total).clamp(0.0, 1.0) } else { 0.0 },
        mean_range: per.iter().map(|s| s.range).sum::<f64>() / k,
        mean_sd: per.iter().map(|s| s.sd).sum::<f64>() / k,
        n_households: pop.len(),
        n_children,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::ChildRecord;

    fn hh(id: u64, female: &[bool], years: &[f64]) -> HouseholdRecord {
        HouseholdRecord {
            household_id: id,
            parent_educ: ParentEduc::None,
            children: female
                .iter()
                .zip(years)
                .enumerate()
                .map(|(i, (&f, &y))| ChildRecord {
                    child_id: id * 10 + i as u64,
                    female: f,
                    birth_order: i as u32 + 1,
                    educ_years: y,
                })
                .collect(),
        }
    }

    #[test]
    fn household_dispersion() {
        let s = inequality_stats(&[hh(1, &[true, true], &[8.0, 8.0]), hh(2, &[true, false], &[0.0, 21.0])]);
        assert_eq!((s[0].range, s[0].sd), (0.0, 0.0));
        assert_eq!((s[1].range, s[1].sd), (21.0, 10.5));
        let s = inequality_stats(&[hh(3, &[true, false, true], &[3.0, 6.0, 9.0])]);
        assert_eq!(s[0].range, 6.0);
        assert!((s[0].sd - 6f64.sqrt()).abs() < 1e-12);
        assert!((s[0].q_bar - 6.0).abs() < 1e-12);
    }

    #[test]
    fn decomposition_by_hand() {
        let pop = [hh(1, &[true, false], &[0.0, 10.0]), hh(2, &[true, false], &[5.0, 5.0])];
        let s = variance_decomposition(&pop).unwrap();
        assert!((s.total_var - 12.5).abs() < 1e-12);
        assert!((s.within_var_mean - 12.5).abs() < 1e-12);
        assert!(s.between_var.abs() < 1e-12);
        let same = [hh(1, &[true, false], &[4.0, 4.0]), hh(2, &[true, false], &[4.0, 4.0])];
        let s = variance_decomposition(&same).unwrap();
        assert_eq!((s.within_var_mean, s.between_var), (0.0, 0.0));
    }

    #[test]
    fn decomposition_identity_mixed_sizes() {
        let pop = [
            hh(1, &[true, false], &[3.0, 10.0]),
            hh(2, &[true, false, true], &[5.0, 7.0, 12.0]),
            hh(3, &[false, false], &[0.0, 1.5]),
        ];
        let s = variance_decomposition(&pop).unwrap();
        assert!((s.total_var - s.within_var_mean - s.between_var).abs() < 1e-12);
    }

    #[test]
    fn decomposition_rejects_singletons() {
        assert!(variance_decomposition(&[hh(1, &[true, false], &[1.0, 2.0])]).is_err());
        assert!(variance_decomposition(&[hh(1, &[true, false], &[1.0, 2.0]), hh(2, &[true], &[3.0])]).is_err());
    }

    fn full_cells() -> Vec<HouseholdRecord> {
        vec![
            hh(1, &[true, true], &[10.0, 10.0]),
            hh(2, &[true, false], &[7.0, 9.0]),
            hh(3, &[false, false], &[6.0, 4.0]),
            hh(4, &[false, true], &[0.0, 8.0]),
            hh(5, &[false, false], &[0.0, 8.0]),
            hh(6, &[true, false], &[12.0, 0.0]),
        ]
    }

    #[test]
    fn hand_moments() {
        let m = compute_moment_vector(&full_cells(), Stratum::new(ParentEduc::None, 2)).unwrap();
        // dd daughters average 10; mixed daughters 7, 8 and 12 average 9
        assert!((m.m1 - 1.0).abs() < 1e-12);
        assert_eq!(m.m2, Some(0.0));
        assert_eq!(m.m3, Some(1.0));
        assert_eq!(m.m4, Some(1.0));
        assert_eq!(m.m_birth, vec![("birth_dd_1_2".to_string(), 0.0), ("birth_ss_1_2".to_string(), 2.0)]);
        assert_eq!(m.values().len(), 6);
    }

    #[test]
    fn two_household_m1() {
        let pop = [hh(1, &[true, true], &[10.0, 10.0]), hh(2, &[true, false], &[7.0, 9.0])];
        let s = Stratum::new(ParentEduc::None, 2);
        assert!(matches!(compute_moment_vector(&pop, s), Err(Error::EmptyCell(_))));
        let m = compute_moment_vector_lenient(&pop, s).unwrap();
        assert!((m.m1 - 3.0).abs() < 1e-12);
        assert_eq!(m.m2, None);
        assert_eq!(m.m_birth, vec![("birth_dd_1_2".to_string(), 0.0)]);
    }

    #[test]
    fn empty_cell_lists_missing() {
        let pop = vec![hh(1, &[true, true], &[10.0, 10.0])];
        match compute_moment_vector(&pop, Stratum::new(ParentEduc::None, 2)) {
            Err(Error::EmptyCell(cells)) => {
                assert!(cells.iter().any(|c| c.contains("only_sons")));
                assert!(cells.iter().any(|c| c.contains("mixed_firstborn_son")));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn permutation_invariant() {
        let mut pop = full_cells();
        let s = Stratum::new(ParentEduc::None, 2);
        let a = compute_moment_vector(&pop, s).unwrap();
        pop.reverse();
        pop.swap(0, 3);
        let b = compute_moment_vector(&pop, s).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
