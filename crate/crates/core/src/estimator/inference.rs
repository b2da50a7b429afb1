//! Bootstrap moment covariance and sandwich standard errors.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::moments::{compute_moment_vector, Stratum};
use crate::population::HouseholdRecord;
use crate::rng::{domain, stream};

const MAX_RETRIES: usize = 10;

/// Covariance over `b` household bootstrap replications of `stat`. A
/// replication whose statistic fails with an empty cell is redrawn, at most
/// ten times.
pub fn bootstrap_cov<F>(data: &[&HouseholdRecord], b: usize, seed: u64, stat: F) -> Result<DMatrix<f64>>
where
    F: Fn(&[HouseholdRecord]) -> Result<Vec<f64>> + Sync,
{
    if b < 2 {
        return Err(Error::invalid("bootstrap", "needs at least 2 replications"));
    }
    if data.is_empty() {
        return Err(Error::InsufficientData("bootstrap on an empty sample".into()));
    }
    let reps: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, domain::BOOTSTRAP, r as u64);
            let mut last = None;
            for _ in 0..=MAX_RETRIES {
                let sample: Vec<HouseholdRecord> = (0..data.len())
                    .map(|_| data[rng.random_range(0..data.len())].clone())
                    .collect();
                match stat(&sample) {
                    Ok(v) => return Ok(v),
                    Err(e @ Error::EmptyCell(_)) => last = Some(e),
                    Err(e) => return Err(e),
                }
            }
            Err(last.expect("loop ran at least once"))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = reps[0].len();
    if reps.iter().any(|r| r.len() != k) {
        return Err(Error::invalid("bootstrap", "statistic changed length across replications"));
    }
    let mut mean = vec![0.0; k];
    for r in &reps {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / b as f64;
        }
    }
    let mut cov = DMatrix::zeros(k, k);
    for r in &reps {
        for i in 0..k {
            for j in 0..=i {
                cov[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..k {
        for j in 0..=i {
            let v = cov[(i, j)] / (b - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

/// Bootstrap covariance of the data moments at `labels`.
pub fn bootstrap_moment_cov(
    data: &[&HouseholdRecord],
    stratum: Stratum,
    labels: &[String],
    b: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    bootstrap_cov(data, b, seed, |sample| compute_moment_vector(sample, stratum)?.values_at(labels))
}

/// Forward-difference Jacobian of `m` at `x`, step `h |x_j|` (or `h` when
/// `x_j = 0`). Rows are moments, columns parameters.
pub fn jacobian<F>(m: F, x: &[f64], h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let base = m(x)?;
    let cols: Vec<Vec<f64>> = (0..x.len())
        .into_par_iter()
        .map(|j| {
            let step = if x[j] == 0.0 { h } else { h * x[j].abs() };
            let mut xp = x.to_vec();
            xp[j] += step;
            let mp = m(&xp)?;
            Ok(mp.iter().zip(&base).map(|(a, b)| (a - b) / step).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(base.len(), x.len(), |i, j| cols[j][i]))
}

/// `Omega = (J' V^-1 J)^-1`. Falls back to a pseudo-inverse of `V` when it
/// is not positive definite; the returned flag records that.
pub fn sandwich(jac: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let (vinv, pseudo) = match v.clone().cholesky() {
        Some(c) => (c.inverse(), false),
        None => (
            v.clone()
                .pseudo_inverse(1e-12 * v.amax().max(1e-300))
                .map_err(|e| Error::Singular(format!("moment covariance: {e}")))?,
            true,
        ),
    };
    let info = jac.transpose() * vinv * jac;
    let info = 0.5 * (&info + info.transpose());
    let omega = info.clone().try_inverse().ok_or_else(|| {
        Error::Singular("J' V^-1 J is singular; increase the number of simulated households or draws".into())
    })?;
    let omega = 0.5 * (&omega + omega.transpose());
    Ok((omega, pseudo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParentEduc;
    use crate::population::ChildRecord;

    fn rec(id: u64, first_educ: bool) -> HouseholdRecord {
        HouseholdRecord {
            household_id: id,
            parent_educ: ParentEduc::None,
            children: vec![
                ChildRecord {
                    child_id: 1,
                    female: true,
                    birth_order: 1,
                    educ_years: if first_educ { 6.0 } else { 0.0 },
                },
                ChildRecord {
                    child_id: 2,
                    female: true,
                    birth_order: 2,
                    educ_years: 4.0,
                },
            ],
        }
    }

    #[test]
    fn binomial_variance() {
        let n = 400;
        let p = 0.3;
        let data: Vec<HouseholdRecord> = (0..n).map(|i| rec(i as u64, i < (p * n as f64) as usize)).collect();
        let refs: Vec<&HouseholdRecord> = data.iter().collect();
        let v = bootstrap_cov(&refs, 500, 4, |s| {
            Ok(vec![s.iter().filter(|h| h.children[0].educ_years > 0.0).count() as f64 / s.len() as f64])
        })
        .unwrap();
        let target = p * (1.0 - p) / n as f64;
        assert!((v[(0, 0)] / target - 1.0).abs() < 0.2, "{} vs {target}", v[(0, 0)]);
    }

    #[test]
    fn constant_data_zero_cov() {
        let data: Vec<HouseholdRecord> = (0..50).map(|i| rec(i, true)).collect();
        let refs: Vec<&HouseholdRecord> = data.iter().collect();
        let v = bootstrap_cov(&refs, 20, 1, |s| Ok(vec![s[0].q_total(), s.len() as f64])).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn covariance_is_psd() {
        let data: Vec<HouseholdRecord> = (0..200).map(|i| rec(i, i % 3 == 0)).collect();
        let refs: Vec<&HouseholdRecord> = data.iter().collect();
        let v = bootstrap_cov(&refs, 50, 2, |s| {
            let a = s.iter().filter(|h| h.children[0].educ_years > 0.0).count() as f64 / s.len() as f64;
            Ok(vec![a, 2.0 * a, 1.0 - a])
        })
        .unwrap();
        assert_eq!(v, v.transpose());
        let eig = v.symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e >= -1e-10));
    }

    #[test]
    fn too_few_replications() {
        let data: Vec<HouseholdRecord> = (0..5).map(|i| rec(i, true)).collect();
        let refs: Vec<&HouseholdRecord> = data.iter().collect();
        assert!(bootstrap_cov(&refs, 1, 0, |_| Ok(vec![0.0])).is_err());
    }

    #[test]
    fn identity_model_gives_v() {
        let v = DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.09]);
        let j = jacobian(|x: &[f64]| Ok(x.to_vec()), &[0.3, 0.0], 1e-4).unwrap();
        let (omega, pseudo) = sandwich(&j, &v).unwrap();
        assert!(!pseudo);
        assert!((omega - v).amax() < 1e-9);
    }

    #[test]
    fn singular_information_is_an_error() {
        let v = DMatrix::identity(2, 2);
        let j = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(sandwich(&j, &v), Err(Error::Singular(_))));
    }
}
