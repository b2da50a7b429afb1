//! Box-constrained derivative-free minimisation: a coarse grid followed by
//! Nelder-Mead with projection onto the box.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub converged: bool,
    /// Relative spread of objective values in the final simplex.
    pub rel_change: f64,
}

/// Minimum of `f` over the `n`-point tensor grid of the unit box.
pub fn grid_search<F: FnMut(&[f64]) -> f64>(f: &mut F, dim: usize, n: usize) -> (Vec<f64>, f64, usize) {
    let n = n.max(2);
    let total = n.pow(dim as u32);
    let mut best = (vec![0.0; dim], f64::INFINITY);
    let mut x = vec![0.0; dim];
    for k in 0..total {
        let mut r = k;
        for xi in x.iter_mut() {
            *xi = (r % n) as f64 / (n - 1) as f64;
            r /= n;
        }
        let v = f(&x);
        if v < best.1 {
            best = (x.clone(), v);
        }
    }
    (best.0, best.1, total)
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((xi, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *xi = xi.clamp(*lo, *hi);
    }
}

/// Nelder-Mead with standard coefficients. Trial points are clamped into
/// `[lower, upper]`. Converged when the simplex diameter is below `xtol` and
/// the relative spread of objective values is below `ftol`.
#[allow(clippy::too_many_arguments)]
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x0: &[f64],
    step: f64,
    lower: &[f64],
    upper: &[f64],
    max_evals: usize,
    xtol: f64,
    ftol: f64,
) -> OptimResult {
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        f(x)
    };
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut start = x0.to_vec();
    project(&mut start, lower, upper);
    simplex.push(start.clone());
    for i in 0..n {
        let mut v = start.clone();
        // step inwards if the vertex would leave the box
        v[i] = if v[i] + step <= upper[i] { v[i] + step } else { v[i] - step };
        project(&mut v, lower, upper);
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|x| eval(x, &mut evals)).collect();

    let spread = |fv: &[f64]| {
        let lo = fv.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = fv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (hi - lo) / lo.abs().max(1e-300)
    };
    let diameter = |s: &[Vec<f64>]| {
        let mut d = 0.0_f64;
        for v in &s[1..] {
            for (a, b) in v.iter().zip(&s[0]) {
                d = d.max((a - b).abs());
            }
        }
        d
    };

    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        fv = order.iter().map(|&i| fv[i]).collect();

        let rel = spread(&fv);
        if diameter(&simplex) <= xtol && (rel <= ftol || fv[n] - fv[0] <= 1e-300) {
            return OptimResult {
                x: simplex[0].clone(),
                f: fv[0],
                evaluations: evals,
                converged: true,
                rel_change: rel,
            };
        }
        if evals >= max_evals {
            return OptimResult {
                x: simplex[0].clone(),
                f: fv[0],
                evaluations: evals,
                converged: rel <= ftol,
                rel_change: rel,
            };
        }

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| {
            let mut p: Vec<f64> = centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (c - w)).collect();
            project(&mut p, lower, upper);
            p
        };
        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < fv[0] {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[n] = xe;
                fv[n] = fe;
            } else {
                simplex[n] = xr;
                fv[n] = fr;
            }
            continue;
        }
        if fr < fv[n - 1] {
            simplex[n] = xr;
            fv[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < fv[n] {
            let xc = along(0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < fv[n].min(fr) {
            simplex[n] = xc;
            fv[n] = fc;
            continue;
        }
        for i in 1..=n {
            let p: Vec<f64> = simplex[0].iter().zip(&simplex[i]).map(|(b, x)| b + 0.5 * (x - b)).collect();
            fv[i] = eval(&p, &mut evals);
            simplex[i] = p;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_minimum() {
        let mut f = |x: &[f64]| (x[0] - 0.3).powi(2) + 3.0 * (x[1] - 0.7).powi(2) + 1.0;
        let r = nelder_mead(&mut f, &[0.5, 0.5], 0.1, &[0.0, 0.0], &[1.0, 1.0], 500, 1e-8, 1e-12);
        assert!(r.converged);
        assert!((r.x[0] - 0.3).abs() < 1e-6 && (r.x[1] - 0.7).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn respects_bounds() {
        let mut f = |x: &[f64]| (x[0] + 1.0).powi(2) + (x[1] - 0.5).powi(2) + 0.1;
        let r = nelder_mead(&mut f, &[0.5, 0.5], 0.1, &[0.0, 0.0], &[1.0, 1.0], 500, 1e-8, 1e-10);
        assert!(r.x[0].abs() < 1e-6 && (r.x[1] - 0.5).abs() < 1e-5, "{r:?}");
    }

    #[test]
    fn budget_exhaustion_reports_not_converged() {
        let mut f = |x: &[f64]| (x[0] - 0.31).powi(2) + (x[1] - 0.77).powi(2) + 1e-3;
        let r = nelder_mead(&mut f, &[0.0, 0.0], 0.05, &[0.0, 0.0], &[1.0, 1.0], 8, 1e-10, 1e-12);
        assert!(!r.converged);
        assert!(r.evaluations >= 8);
    }

    #[test]
    fn rosenbrock() {
        let mut f = |x: &[f64]| {
            let (a, b) = (x[0] * 4.0 - 2.0, x[1] * 4.0 - 2.0);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2) + 1.0
        };
        let r = nelder_mead(&mut f, &[0.2, 0.3], 0.1, &[0.0, 0.0], &[1.0, 1.0], 2000, 1e-9, 1e-14);
        assert!((r.x[0] - 0.75).abs() < 1e-4 && (r.x[1] - 0.75).abs() < 1e-4, "{r:?}");
    }

    #[test]
    fn grid_finds_cell() {
        let mut f = |x: &[f64]| (x[0] - 0.42).powi(2) + (x[1] - 0.18).powi(2);
        let (x, _, n) = grid_search(&mut f, 2, 11);
        assert_eq!(n, 121);
        assert!((x[0] - 0.4).abs() < 1e-12 && (x[1] - 0.2).abs() < 1e-12);
    }
}
