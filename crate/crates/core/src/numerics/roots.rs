use crate::error::{Error, Result};
use crate::real::Real;

/// Locates the root of `f` in a sign-changing bracket `[lo, hi]` by
/// bisection, then polishes it with safeguarded Newton steps using `df`.
///
/// Returns the root once `|f(x)| <= ftol` or the bracket has collapsed to
/// machine resolution.
pub fn bisect_newton<T, F, D>(f: F, df: D, lo: T, hi: T, ftol: T) -> Result<T>
where
    T: Real,
    F: Fn(T) -> T,
    D: Fn(T) -> T,
{
    let (mut a, mut b) = (lo, hi);
    let mut fa = f(a);
    let fb = f(b);
    if fa == T::zero() {
        return Ok(a);
    }
    if fb == T::zero() {
        return Ok(b);
    }
    if (fa > T::zero()) == (fb > T::zero()) {
        return Err(Error::NonConvergence { lo: lo.to_f64_lossy(), hi: hi.to_f64_lossy() });
    }
    // Coarse bisection down to a small fraction of the bracket.
    let width0 = (b - a).abs();
    let two = T::of(2.0);
    while (b - a).abs() > width0 * T::of(1e-6) {
        let m = (a + b) / two;
        if m == a || m == b {
            break;
        }
        let fm = f(m);
        if fm == T::zero() {
            return Ok(m);
        }
        if (fm > T::zero()) == (fa > T::zero()) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    let mut x = (a + b) / two;
    for _ in 0..100 {
        let fx = f(x);
        if fx.abs() <= ftol {
            return Ok(x);
        }
        if (fx > T::zero()) == (fa > T::zero()) {
            a = x;
            fa = fx;
        } else {
            b = x;
        }
        let d = df(x);
        let mut next = if d != T::zero() { x - fx / d } else { (a + b) / two };
        if !(next > a.min(b) && next < a.max(b)) {
            next = (a + b) / two;
        }
        if next == x || (b - a).abs() <= T::epsilon() * x.abs().max(T::one()) * two {
            let fx = f(next);
            if fx.abs() <= ftol {
                return Ok(next);
            }
            break;
        }
        x = next;
    }
    let fx = f(x);
    if fx.abs() <= ftol {
        Ok(x)
    } else {
        Err(Error::NonConvergence { lo: lo.to_f64_lossy(), hi: hi.to_f64_lossy() })
    }
}

/// Plain bisection on `[lo, hi]` until the bracket is narrower than `xtol`.
pub fn bisect<T: Real, F: Fn(T) -> T>(f: F, lo: T, hi: T, xtol: T) -> T {
    let (a, b) = bisect_bracket(f, lo, hi, xtol);
    (a + b) * T::of(0.5)
}

/// Bisection returning the final bracket, narrower than `xtol`.
pub fn bisect_bracket<T: Real, F: Fn(T) -> T>(f: F, lo: T, hi: T, xtol: T) -> (T, T) {
    let (mut a, mut b) = (lo, hi);
    let fa_pos = f(a) > T::zero();
    while (b - a).abs() > xtol {
        let m = (a + b) * T::of(0.5);
        if m == a || m == b {
            break;
        }
        if (f(m) > T::zero()) == fa_pos {
            a = m;
        } else {
            b = m;
        }
    }
    (a, b)
}
