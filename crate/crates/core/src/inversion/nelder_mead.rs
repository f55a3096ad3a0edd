//! Nelder–Mead simplex descent on an unconstrained space.

use serde::{Deserialize, Serialize};

use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimplexOptions {
    pub max_evaluations: usize,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
    /// Stop when the simplex diameter falls below this.
    pub xtol: f64,
    /// Stop when the spread of vertex values falls below this.
    pub ftol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self { max_evaluations: 600, initial_step: 0.6, xtol: 1e-6, ftol: 1e-14 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOutcome<T> {
    pub x: Vec<T>,
    pub value: T,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimises `f` from `x0`. Non-finite values are treated as `+∞`.
/// Every evaluation is reported to `observe` in order.
pub fn nelder_mead<T: Real, F, O>(mut f: F, x0: &[T], opts: &SimplexOptions, mut observe: O) -> SimplexOutcome<T>
where
    F: FnMut(&[T]) -> T,
    O: FnMut(&[T], T),
{
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[T], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        let v = if v.is_finite() { v } else { T::infinity() };
        observe(x, v);
        v
    };
    if n == 0 {
        let v = eval(x0, &mut evals);
        return SimplexOutcome { x: x0.to_vec(), value: v, evaluations: evals, converged: true };
    }
    let step = T::of(opts.initial_step);
    let mut simplex: Vec<Vec<T>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<T> = simplex.iter().map(|v| eval(v, &mut evals)).collect();
    let (alpha, gamma, rho, shrink) = (T::one(), T::of(2.0), T::of(0.5), T::of(0.5));
    let mut converged = false;
    while evals < opts.max_evaluations {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|a, b| values[*a].partial_cmp(&values[*b]).unwrap_or(std::cmp::Ordering::Equal));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let diameter = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs())))
            .fold(T::zero(), T::max);
        if spread.is_finite() && spread <= T::of(opts.ftol) && diameter <= T::of(opts.xtol) {
            converged = true;
            break;
        }

        let mut centroid = vec![T::zero(); n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += *x / T::of_usize(n);
            }
        }
        let along = |t: T| -> Vec<T> { centroid.iter().zip(&simplex[n]).map(|(c, w)| *c + t * (*c - *w)).collect() };

        let xr = along(alpha);
        let fr = eval(&xr, &mut evals);
        if fr < values[0] {
            let xe = along(gamma);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        // outside contraction if the reflection helped at all, inside otherwise
        let xc = if fr < values[n] { along(rho) } else { along(-rho) };
        let fc = eval(&xc, &mut evals);
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        for i in 1..=n {
            let v: Vec<T> = simplex[0].iter().zip(&simplex[i]).map(|(b, x)| *b + shrink * (*x - *b)).collect();
            values[i] = eval(&v, &mut evals);
            simplex[i] = v;
        }
    }
    let best = (0..=n).min_by(|a, b| values[*a].partial_cmp(&values[*b]).unwrap_or(std::cmp::Ordering::Equal)).unwrap_or(0);
    SimplexOutcome { x: simplex[best].clone(), value: values[best], evaluations: evals, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = SimplexOptions { max_evaluations: 5000, xtol: 1e-9, ftol: 1e-18, ..Default::default() };
        let out = nelder_mead(f, &[-1.2, 1.0], &opts, |_, _| {});
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-5 && (out.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn respects_budget_and_reports_every_evaluation() {
        let mut seen = 0;
        let opts = SimplexOptions { max_evaluations: 30, ..Default::default() };
        let out = nelder_mead(|x: &[f64]| x.iter().map(|v| (v - 3.0).powi(4)).sum(), &[0.0; 4], &opts, |_, _| seen += 1);
        assert!(!out.converged);
        assert_eq!(seen, out.evaluations);
        assert!(out.evaluations <= 30 + 4);
    }

    #[test]
    fn infinite_values_are_avoided() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.5).powi(2) };
        let out = nelder_mead(f, &[1.0], &SimplexOptions::default(), |_, _| {});
        assert!((out.x[0] - 0.5).abs() < 1e-5);
    }
}
