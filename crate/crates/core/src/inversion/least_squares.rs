//! Levenberg-Marquardt refinement with a central-difference Jacobian.

use crate::numerics::linalg::DenseMatrix;
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresOutcome<T> {
    pub x: Vec<T>,
    /// Sum of squared residuals at `x`.
    pub value: T,
    pub evaluations: usize,
    /// The damping grew past its limit or the step stopped improving.
    pub converged: bool,
}

fn sum_squares<T: Real>(r: &[T]) -> T {
    r.iter().fold(T::zero(), |acc, v| acc + *v * *v)
}

/// Minimize `Σ r_i(x)²` from `x0`. `residuals` returns `None` where the
/// model cannot be evaluated; such points are treated as rejected steps.
/// Every evaluation is reported to `observe` with its sum of squares.
pub fn levenberg_marquardt<T, F, O>(residuals: F, x0: &[T], iterations: usize, step: T, mut observe: O) -> LeastSquaresOutcome<T>
where
    T: Real,
    F: Fn(&[T]) -> Option<Vec<T>>,
    O: FnMut(&[T], T),
{
    let n = x0.len();
    let mut evaluations = 0;
    let mut eval = |x: &[T]| {
        evaluations += 1;
        let r = residuals(x);
        let v = r.as_deref().map(sum_squares).unwrap_or(T::infinity());
        observe(x, v);
        r
    };
    let mut x = x0.to_vec();
    let Some(mut r) = eval(&x) else {
        return LeastSquaresOutcome { x, value: T::infinity(), evaluations: 1, converged: false };
    };
    let mut value = sum_squares(&r);
    let mut lambda = T::of(1e-3);
    let mut converged = false;
    'outer: for _ in 0..iterations {
        let m = r.len();
        let mut jac = DenseMatrix::zeros(m, n);
        for k in 0..n {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus[k] += step;
            minus[k] -= step;
            let (Some(rp), Some(rm)) = (eval(&plus), eval(&minus)) else {
                break 'outer;
            };
            for i in 0..m {
                jac[(i, k)] = (rp[i] - rm[i]) / (step + step);
            }
        }
        let jt = jac.transpose();
        let jtj = jt.matmul(&jac);
        let grad = jt.matvec(&r);
        loop {
            let damped = DenseMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    jtj[(i, i)] * (T::one() + lambda) + T::of(1e-30)
                } else {
                    jtj[(i, j)]
                }
            });
            let Ok(delta) = damped.solve(&grad) else {
                lambda *= T::of(10.0);
                if lambda > T::of(1e12) {
                    converged = true;
                    break 'outer;
                }
                continue;
            };
            let trial: Vec<T> = x.iter().zip(&delta).map(|(a, d)| *a - *d).collect();
            match eval(&trial) {
                Some(rt) if sum_squares(&rt) < value => {
                    let next = sum_squares(&rt);
                    let gain = (value - next) / value.max(T::min_positive_value());
                    x = trial;
                    r = rt;
                    value = next;
                    lambda = (lambda / T::of(3.0)).max(T::of(1e-12));
                    if gain < T::of(1e-10) {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                _ => {
                    lambda *= T::of(4.0);
                    if lambda > T::of(1e12) {
                        converged = true;
                        break 'outer;
                    }
                }
            }
        }
    }
    LeastSquaresOutcome { x, value, evaluations, converged }
}
