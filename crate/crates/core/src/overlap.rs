//! Closed-form vertical overlap of the exponential correlation kernel.
//!
//! `S(k, k') = 1/2 ∫₀ᴸ∫₀ᴸ exp(-|z - z'|/ℓ) cos(kz) cos(k'z') dz dz'`.
//!
//! Writing `cos(kz)cos(k'z') = Re[e^{i(kz + k'z')} + e^{i(kz - k'z')}]/2`
//! reduces it to `S = Re[J(k, k') + J(k, -k')]/4` with
//! `J(a, b) = ∫∫ e^{-α|z - z'|} e^{i(az + bz')}`, `α = 1/ℓ`. Splitting the
//! square along the diagonal gives
//!
//! `J(a, b) = 2α/(α² + b²) E(a + b) - E(a + iα)/(α + ib)
//!           - (e^{i(a+b)L} - e^{(ib - α)L}) / ((α + ia)(α - ib))`
//!
//! where `E(c) = (e^{icL} - 1)/(ic)`. The only removable singularity is
//! `E` at small `|cL|`, handled by its Taylor series.

use num_complex::Complex;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapKernel<T> {
    ell_v: T,
    z_b: T,
    #[serde(skip)]
    alpha: T,
    #[serde(skip)]
    decay: T,
}

impl<T: Real> OverlapKernel<T> {
    pub fn new(ell_v: T, z_b: T) -> Result<Self> {
        if !(ell_v > T::zero() && z_b > T::zero() && ell_v.is_finite() && z_b.is_finite()) {
            return Err(Error::InvalidParameter("overlap kernel needs ell_v > 0 and z_b > 0".into()));
        }
        let alpha = ell_v.recip();
        Ok(Self { ell_v, z_b, alpha, decay: (-alpha * z_b).exp() })
    }

    pub fn ell_v(&self) -> T {
        self.ell_v
    }

    pub fn z_b(&self) -> T {
        self.z_b
    }

    /// Evaluates `S(k, k')`.
    pub fn s(&self, k: T, kp: T) -> T {
        self.s_with(k, kp, cis(k * self.z_b), cis(kp * self.z_b))
    }

    /// `S(k, k')` given `ck = e^{ikL}` and `cp = e^{ik'L}`.
    #[inline]
    fn s_with(&self, k: T, kp: T, ck: Complex<T>, cp: Complex<T>) -> T {
        let ea = e_of(Complex::new(k, self.alpha), ck * self.decay, self.z_b);
        let j1 = self.j(k, kp, ck, cp, ea);
        let j2 = self.j(k, -kp, ck, cp.conj(), ea);
        T::of(0.25) * (j1 + j2).re
    }

    /// Four-term combination `S(d,d) + S(s,s) - S(d,s) - S(s,d)` for
    /// `d = k1 - k2`, `s = k1 + k2`, which equals
    /// `4 ∫∫ R sin(k1 z) sin(k2 z) sin(k1 z') sin(k2 z')`.
    pub fn product_overlap(&self, k1: T, k2: T) -> T {
        let d = k1 - k2;
        let s = k1 + k2;
        let cd = cis(d * self.z_b);
        let cs = cis(s * self.z_b);
        self.s_with(d, d, cd, cd) + self.s_with(s, s, cs, cs) - T::of(2.0) * self.s_with(d, s, cd, cs)
    }

    /// `S(0,0) - S(2k1,0) - S(0,2k2) + S(2k1,2k2)`, which equals
    /// `4 ∫∫ R sin²(k1 z) sin²(k2 z')`.
    pub fn square_overlap(&self, k1: T, k2: T) -> T {
        let two = T::of(2.0);
        let z = T::zero();
        self.s(z, z) - self.s(two * k1, z) - self.s(z, two * k2) + self.s(two * k1, two * k2)
    }

    #[inline]
    fn j(&self, a: T, b: T, ca: Complex<T>, cb: Complex<T>, ea: Complex<T>) -> Complex<T> {
        let (l, alpha) = (self.z_b, self.alpha);
        let cab = ca * cb;
        let eab = e_of(Complex::new(a + b, T::zero()), cab, l);
        let t1 = eab * (T::of(2.0) * alpha / (alpha * alpha + b * b));
        let t2 = ea / Complex::new(alpha, b);
        let t3 = (cab - cb * self.decay) / (Complex::new(alpha, a) * Complex::new(alpha, -b));
        t1 - t2 - t3
    }
}

#[inline]
fn cis<T: Real>(x: T) -> Complex<T> {
    let (s, c) = x.sin_cos();
    Complex::new(c, s)
}

/// `E(c) = (e^{icL} - 1)/(ic)` given `ew = e^{icL}`.
#[inline]
fn e_of<T: Real>(c: Complex<T>, ew: Complex<T>, l: T) -> Complex<T> {
    let w = Complex::new(-c.im * l, c.re * l);
    if w.norm_sqr() < T::of(1e-4) {
        // (e^w - 1)/w = 1 + w/2 + w²/6 + w³/24 + w⁴/120 + w⁵/720
        let mut acc = Complex::new(T::one() / T::of(720.0), T::zero());
        for d in [120.0, 24.0, 6.0, 2.0, 1.0] {
            acc = acc * w + Complex::new(T::one() / T::of(d), T::zero());
        }
        acc * l
    } else {
        (ew - Complex::new(T::one(), T::zero())) / Complex::new(-c.im, c.re)
    }
}
