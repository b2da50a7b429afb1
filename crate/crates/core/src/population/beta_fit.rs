//! Maximum-likelihood fit of a Beta law.

use serde::{Deserialize, Serialize};

use super::AbilityDist;
use crate::error::{Error, Result};
use crate::stats::{digamma, mean, pop_variance, trigamma};

const MAX_ITER: usize = 500;
const TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaFit {
    pub dist: AbilityDist,
    pub iterations: usize,
    pub log_likelihood: f64,
    pub initial: AbilityDist,
}

/// Newton iterations on the score, starting from the method-of-moments fit.
/// Steps are halved whenever they would leave the positive quadrant or lower
/// the likelihood.
pub fn fit_beta_mle(samples: &[f64]) -> Result<BetaFit> {
    if samples.len() < 30 {
        return Err(Error::InsufficientData(format!(
            "need at least 30 samples for a Beta fit, got {}",
            samples.len()
        )));
    }
    if let Some(x) = samples.iter().find(|&&x| !(x > 0.0 && x < 1.0)) {
        return Err(Error::invalid(
            "samples",
            format!("{x} is not strictly inside (0, 1); clip the data away from the bounds"),
        ));
    }
    let n = samples.len() as f64;
    let s1 = samples.iter().map(|x| x.ln()).sum::<f64>() / n;
    let s2 = samples.iter().map(|x| (1.0 - x).ln()).sum::<f64>() / n;

    let m = mean(samples);
    let v = pop_variance(samples);
    let common = if v > 0.0 && v < m * (1.0 - m) {
        m * (1.0 - m) / v - 1.0
    } else {
        1.0
    };
    let init = AbilityDist {
        beta1: m * common,
        beta2: (1.0 - m) * common,
    };
    let ll = |a: f64, b: f64| AbilityDist { beta1: a, beta2: b }.log_likelihood(samples);

    let (mut a, mut b) = (init.beta1, init.beta2);
    let mut cur = ll(a, b);
    for iter in 1..=MAX_ITER {
        let ps = digamma(a + b);
        let g1 = ps - digamma(a) + s1;
        let g2 = ps - digamma(b) + s2;
        if g1.abs().max(g2.abs()) < TOL {
            return Ok(finish(a, b, iter - 1, cur, init));
        }
        let t = trigamma(a + b);
        let (h11, h22, h12) = (t - trigamma(a), t - trigamma(b), t);
        let det = h11 * h22 - h12 * h12;
        let (mut da, mut db) = if det.abs() > 0.0 {
            (-(h22 * g1 - h12 * g2) / det, -(h11 * g2 - h12 * g1) / det)
        } else {
            (g1, g2)
        };
        let mut accepted = false;
        for _ in 0..60 {
            let (na, nb) = (a + da, b + db);
            if na > 0.0 && nb > 0.0 {
                let next = ll(na, nb);
                if next >= cur - 1e-12 * cur.abs() {
                    a = na;
                    b = nb;
                    cur = next;
                    accepted = true;
                    break;
                }
            }
            da *= 0.5;
            db *= 0.5;
        }
        if !accepted {
            // no ascent direction left at floating-point resolution
            return Ok(finish(a, b, iter, cur, init));
        }
        if da.abs() <= 1e-14 * a && db.abs() <= 1e-14 * b {
            return Ok(finish(a, b, iter, cur, init));
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITER,
        message: "Beta MLE Newton iterations did not converge".into(),
        best: vec![a, b],
        best_value: cur,
    })
}

fn finish(a: f64, b: f64, iterations: usize, log_likelihood: f64, initial: AbilityDist) -> BetaFit {
    BetaFit {
        dist: AbilityDist { beta1: a, beta2: b },
        iterations,
        log_likelihood,
        initial,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn recovers_reference_shapes() {
        let d = AbilityDist::default();
        let mut rng = stream(17, 0, 0);
        let xs: Vec<f64> = (0..10_000).map(|_| d.sample(&mut rng)).collect();
        let fit = fit_beta_mle(&xs).unwrap();
        assert!((fit.dist.beta1 / 28.82 - 1.0).abs() < 0.05, "{:?}", fit.dist);
        assert!((fit.dist.beta2 / 28.78 - 1.0).abs() < 0.05, "{:?}", fit.dist);
        assert!(fit.log_likelihood >= fit.initial.log_likelihood(&xs));
    }

    #[test]
    fn symmetric_sample_gives_equal_shapes() {
        let mut rng = stream(2, 0, 0);
        let mut xs = Vec::new();
        for _ in 0..500 {
            let x: f64 = rng.random_range(0.05..0.95);
            xs.push(x);
            xs.push(1.0 - x);
        }
        let fit = fit_beta_mle(&xs).unwrap();
        assert!((fit.dist.beta1 - fit.dist.beta2).abs() < 1e-6);
    }

    #[test]
    fn uniform_is_beta_one_one() {
        let mut rng = stream(4, 0, 0);
        let xs: Vec<f64> = (0..20_000).map(|_| rng.random_range(1e-9..1.0)).collect();
        let fit = fit_beta_mle(&xs).unwrap();
        assert!((fit.dist.beta1 - 1.0).abs() < 0.1 && (fit.dist.beta2 - 1.0).abs() < 0.1, "{:?}", fit.dist);
    }

    #[test]
    fn rejects_boundary_and_small_samples() {
        let mut xs = vec![0.5; 40];
        xs[3] = 0.0;
        assert!(fit_beta_mle(&xs).is_err());
        assert!(fit_beta_mle(&[0.5; 10]).is_err());
    }
}
