//! Dormand-Prince 5(4) integrator for autonomous systems `y' = f(y)`.

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions<T> {
    pub rtol: T,
    pub atol: T,
    /// Initial step; chosen automatically when `None`.
    pub initial_step: Option<T>,
    pub max_steps: usize,
}

impl<T: Real> Default for OdeOptions<T> {
    fn default() -> Self {
        Self { rtol: T::tol(1e-11), atol: T::tol(1e-14), initial_step: None, max_steps: 1_000_000 }
    }
}

#[derive(Debug, Clone)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `y' = f(y)` from 0 to `x_end` starting at `y0`.
pub fn dopri5<T, F>(mut f: F, y0: &[T], x_end: T, opts: &OdeOptions<T>) -> Result<(Vec<T>, OdeStats)>
where
    T: Real,
    F: FnMut(&[T], &mut [T]),
{
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut stats = OdeStats { accepted: 0, rejected: 0, evaluations: 0 };
    if x_end <= T::zero() || n == 0 {
        return Ok((y, stats));
    }
    let c = T::of;
    let mut k1 = vec![T::zero(); n];
    let mut k2 = vec![T::zero(); n];
    let mut k3 = vec![T::zero(); n];
    let mut k4 = vec![T::zero(); n];
    let mut k5 = vec![T::zero(); n];
    let mut k6 = vec![T::zero(); n];
    let mut k7 = vec![T::zero(); n];
    let mut tmp = vec![T::zero(); n];
    let mut y_new = vec![T::zero(); n];

    f(&y, &mut k1);
    stats.evaluations += 1;

    let scale_of = |y: &[T], i: usize, opts: &OdeOptions<T>| opts.atol + opts.rtol * y[i].abs();
    let mut h = match opts.initial_step {
        Some(h) => h,
        None => {
            let mut d0 = T::zero();
            let mut d1 = T::zero();
            for i in 0..n {
                let sc = scale_of(&y, i, opts);
                d0 = d0.max((y[i] / sc).abs());
                d1 = d1.max((k1[i] / sc).abs());
            }
            if d0 < c(1e-5) || d1 < c(1e-5) {
                c(1e-6) * x_end
            } else {
                (c(0.01) * d0 / d1).min(x_end)
            }
        }
    };
    let mut x = T::zero();
    let mut err_prev = c(1e-4);
    let h_min = x_end * T::epsilon() * c(16.0);

    while x < x_end {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::IntegratorFailure { x: x.to_f64_lossy() });
        }
        if x + h > x_end {
            h = x_end - x;
        }
        let stage = |out: &mut Vec<T>, parts: &[(&Vec<T>, f64)], y: &[T], h: T| {
            for i in 0..n {
                let mut s = T::zero();
                for (k, a) in parts {
                    s += k[i] * c(*a);
                }
                out[i] = y[i] + h * s;
            }
        };
        stage(&mut tmp, &[(&k1, A21)], &y, h);
        f(&tmp, &mut k2);
        stage(&mut tmp, &[(&k1, A31), (&k2, A32)], &y, h);
        f(&tmp, &mut k3);
        stage(&mut tmp, &[(&k1, A41), (&k2, A42), (&k3, A43)], &y, h);
        f(&tmp, &mut k4);
        stage(&mut tmp, &[(&k1, A51), (&k2, A52), (&k3, A53), (&k4, A54)], &y, h);
        f(&tmp, &mut k5);
        stage(&mut tmp, &[(&k1, A61), (&k2, A62), (&k3, A63), (&k4, A64), (&k5, A65)], &y, h);
        f(&tmp, &mut k6);
        stage(&mut y_new, &[(&k1, B1), (&k3, B3), (&k4, B4), (&k5, B5), (&k6, B6)], &y, h);
        f(&y_new, &mut k7);
        stats.evaluations += 6;

        let mut err = T::zero();
        for i in 0..n {
            let e = h
                * (k1[i] * c(E1) + k3[i] * c(E3) + k4[i] * c(E4) + k5[i] * c(E5) + k6[i] * c(E6) + k7[i] * c(E7));
            let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            let r = e / sc;
            err += r * r;
        }
        err = (err / T::of_usize(n)).sqrt();

        if err <= T::one() || h <= h_min {
            if err > T::one() {
                return Err(Error::IntegratorFailure { x: x.to_f64_lossy() });
            }
            x += h;
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            stats.accepted += 1;
            // PI step-size control
            let errc = err.max(c(1e-10));
            let fac = c(0.9) * errc.powf(c(-0.7 / 5.0)) * err_prev.powf(c(0.4 / 5.0));
            h *= fac.max(c(0.2)).min(c(5.0));
            err_prev = errc;
        } else {
            stats.rejected += 1;
            let fac = (c(0.9) * err.powf(c(-0.2))).max(c(0.2));
            h *= fac;
            if h < h_min {
                return Err(Error::IntegratorFailure { x: x.to_f64_lossy() });
            }
        }
    }
    Ok((y, stats))
}
