//! Guided and continuous spectrum of the two-layer (water over fast fluid
//! bottom) waveguide, and the modal amplitudes excited by a point source.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::roots::bisect_newton;
use crate::real::Real;

/// Deterministic waveguide description plus the statistics of the random
/// sound-speed fluctuations in the water column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentParams<T> {
    /// Sound speed in water (m/s).
    pub c_w: T,
    /// Sound speed in the sediment (m/s), must exceed `c_w`.
    pub c_s: T,
    /// Water density (kg/m³).
    pub rho_w: T,
    /// Sediment density (kg/m³).
    pub rho_s: T,
    /// Water depth (m).
    pub z_b: T,
    /// Dimensionless sediment dissipation.
    pub nu_s: T,
    /// Relative index-fluctuation scale; fluctuation variance is sigma²/2.
    pub sigma: T,
    /// Vertical correlation length of the fluctuations (m).
    pub ell_v: T,
    /// Horizontal correlation length of the fluctuations (m).
    pub ell_h: T,
}

impl<T: Real> EnvironmentParams<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        let all = [self.c_w, self.c_s, self.rho_w, self.rho_s, self.z_b, self.nu_s, self.sigma, self.ell_v, self.ell_h];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("environment parameters must be finite");
        }
        if !(self.c_w > T::zero()) {
            return bad("c_w must be positive");
        }
        if !(self.c_s > self.c_w) {
            return bad("c_s must exceed c_w");
        }
        if !(self.rho_w > T::zero() && self.rho_s > T::zero()) {
            return bad("densities must be positive");
        }
        if !(self.z_b > T::zero()) {
            return bad("z_b must be positive");
        }
        if self.nu_s < T::zero() {
            return bad("nu_s must be nonnegative");
        }
        if self.sigma < T::zero() {
            return bad("sigma must be nonnegative");
        }
        if !(self.ell_v > T::zero() && self.ell_h > T::zero()) {
            return bad("correlation lengths must be positive");
        }
        Ok(())
    }

    pub fn k_w(&self, omega: T) -> T {
        omega / self.c_w
    }

    pub fn k_s(&self, omega: T) -> T {
        omega / self.c_s
    }

    /// Upper end `z_b sqrt(k_w² - k_s²)` of the admissible transverse
    /// parameter interval.
    pub fn transverse_limit(&self, omega: T) -> T {
        let kw = self.k_w(omega);
        let ks = self.k_s(omega);
        self.z_b * (kw * kw - ks * ks).sqrt()
    }

    /// Normalised dispersion function whose zeros in `(0, V)` are the guided
    /// mode parameters, `V = transverse_limit(omega)`:
    /// `[rho_w sin(s) sqrt(V² - s²) + rho_s s cos(s)] / (V (rho_w + rho_s))`.
    ///
    /// This is the tangent relation multiplied through by
    /// `rho_w cos(s) sqrt(V² - s²)`, so it has no poles.
    pub fn dispersion(&self, omega: T, s: T) -> T {
        let v = self.transverse_limit(omega);
        let root = (v * v - s * s).max(T::zero()).sqrt();
        (self.rho_w * s.sin() * root + self.rho_s * s * s.cos()) / (v * (self.rho_w + self.rho_s))
    }

    fn dispersion_derivative(&self, omega: T, s: T) -> T {
        let v = self.transverse_limit(omega);
        let root = (v * v - s * s).max(T::min_positive_value()).sqrt();
        let d = self.rho_w * (s.cos() * root - s.sin() * s / root) + self.rho_s * (s.cos() - s * s.sin());
        d / (v * (self.rho_w + self.rho_s))
    }
}

/// Source depth and source-to-array range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec<T> {
    pub z0: T,
    pub x_a: T,
}

impl<T: Real> SourceSpec<T> {
    pub fn validate(&self, z_b: T) -> Result<()> {
        if !(self.z0 > T::zero() && self.z0 < z_b) {
            return Err(Error::InvalidParameter("source depth must lie in (0, z_b)".into()));
        }
        if !(self.x_a > T::zero()) {
            return Err(Error::InvalidParameter("source-array range must be positive".into()));
        }
        Ok(())
    }
}

/// Below this sediment decay parameter a mode is treated as being at
/// cutoff and discarded.
pub const CUTOFF_ZETA: f64 = 1e-8;

/// Guided-mode spectrum at one angular frequency. Immutable once built.
#[derive(Debug, Clone, Serialize)]
pub struct ModeSet<T> {
    env: EnvironmentParams<T>,
    omega: T,
    k_w: T,
    k_s: T,
    sigma: Vec<T>,
    beta: Vec<T>,
    zeta: Vec<T>,
    amp: Vec<T>,
    k_wj: Vec<T>,
    /// 1-based mode numbers in the full spectrum (differs from position
    /// after truncation).
    number: Vec<usize>,
    dropped_near_cutoff: usize,
}

/// Solves the guided-mode eigenproblem at angular frequency `omega`.
///
/// An empty set (N = 0) is a valid result; use [`ModeSet::require_guided`]
/// where the caller needs at least one mode.
pub fn solve_modes<T: Real>(env: &EnvironmentParams<T>, omega: T) -> Result<ModeSet<T>> {
    env.validate()?;
    if !(omega > T::zero() && omega.is_finite()) {
        return Err(Error::InvalidParameter("omega must be positive".into()));
    }
    let k_w = env.k_w(omega);
    let k_s = env.k_s(omega);
    let v = env.transverse_limit(omega);
    let pi = T::PI();
    let half = T::of(0.5);
    let ftol = T::tol(1e-12);

    let mut out = ModeSet {
        env: *env,
        omega,
        k_w,
        k_s,
        sigma: Vec::new(),
        beta: Vec::new(),
        zeta: Vec::new(),
        amp: Vec::new(),
        k_wj: Vec::new(),
        number: Vec::new(),
        dropped_near_cutoff: 0,
    };

    // One root per tangent branch ((m - 1/2)pi, (m + 1/2)pi); it lies where
    // tan is negative, i.e. in ((m - 1/2)pi, min(m pi, V)).
    let mut m = 1usize;
    loop {
        let lo = (T::of_usize(m) - half) * pi;
        if lo >= v {
            break;
        }
        let hi = (T::of_usize(m) * pi).min(v);
        let s = bisect_newton(
            |s| env.dispersion(omega, s),
            |s| env.dispersion_derivative(omega, s),
            lo,
            hi,
            ftol,
        )?;
        let zeta = (v * v - s * s).max(T::zero()).sqrt();
        if zeta <= T::of(CUTOFF_ZETA) {
            warn!("dropping mode {m} at cutoff (zeta = {zeta})");
            out.dropped_near_cutoff += 1;
            m += 1;
            continue;
        }
        let kwj = s / env.z_b;
        let beta = (k_w * k_w - kwj * kwj).sqrt();
        let two = T::of(2.0);
        let sin_s = s.sin();
        let denom = (T::one() - (two * s).sin() / (two * s)) / env.rho_w + sin_s * sin_s / (zeta * env.rho_s);
        let amp = ((two / env.z_b) / denom).sqrt();
        out.sigma.push(s);
        out.beta.push(beta);
        out.zeta.push(zeta);
        out.amp.push(amp);
        out.k_wj.push(kwj);
        out.number.push(m);
        m += 1;
    }
    Ok(out)
}

impl<T: Real> ModeSet<T> {
    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// Errors with `NoGuidedModes` if the set is empty.
    pub fn require_guided(&self) -> Result<&Self> {
        if self.is_empty() {
            Err(Error::NoGuidedModes { omega: self.omega.to_f64_lossy() })
        } else {
            Ok(self)
        }
    }

    pub fn env(&self) -> &EnvironmentParams<T> {
        &self.env
    }

    pub fn omega(&self) -> T {
        self.omega
    }

    pub fn k_w(&self) -> T {
        self.k_w
    }

    pub fn k_s(&self) -> T {
        self.k_s
    }

    pub fn sigma(&self) -> &[T] {
        &self.sigma
    }

    pub fn beta(&self) -> &[T] {
        &self.beta
    }

    pub fn zeta(&self) -> &[T] {
        &self.zeta
    }

    /// Normalisation amplitudes A_j.
    pub fn amplitude(&self) -> &[T] {
        &self.amp
    }

    /// Vertical wavenumbers in water, `sqrt(k_w² - beta_j²) = sigma_j / z_b`.
    pub fn k_wj(&self) -> &[T] {
        &self.k_wj
    }

    pub fn mode_numbers(&self) -> &[usize] {
        &self.number
    }

    pub fn dropped_near_cutoff(&self) -> usize {
        self.dropped_near_cutoff
    }

    /// Dispersion residual of each root.
    pub fn residuals(&self) -> Vec<T> {
        self.sigma.iter().map(|s| self.env.dispersion(self.omega, *s)).collect()
    }

    fn check(&self, j: usize) -> Result<()> {
        if j >= self.len() {
            Err(Error::IndexOutOfRange { index: j, count: self.len() })
        } else {
            Ok(())
        }
    }

    /// Eigenfunction of mode `j` (0-based position) at depth `z`.
    pub fn phi(&self, j: usize, z: T) -> Result<T> {
        self.check(j)?;
        Ok(self.phi_unchecked(j, z))
    }

    #[inline]
    pub(crate) fn phi_unchecked(&self, j: usize, z: T) -> T {
        let zb = self.env.z_b;
        if z <= zb {
            self.amp[j] * (self.sigma[j] * z / zb).sin()
        } else {
            self.amp[j] * self.sigma[j].sin() * (-self.zeta[j] * (z - zb) / zb).exp()
        }
    }

    /// Depth derivative of the eigenfunction; `below` selects the sediment
    /// side at `z = z_b`.
    pub fn phi_derivative(&self, j: usize, z: T, below: bool) -> Result<T> {
        self.check(j)?;
        let zb = self.env.z_b;
        Ok(if z < zb || (z == zb && !below) {
            self.amp[j] * self.k_wj[j] * (self.sigma[j] * z / zb).cos()
        } else {
            -self.amp[j] * self.sigma[j].sin() * self.zeta[j] / zb * (-self.zeta[j] * (z - zb) / zb).exp()
        })
    }

    /// `∫_{z_b}^∞ phi_j² dz = A_j² sin²(sigma_j) z_b / (2 zeta_j)`.
    pub fn sediment_tail_integral(&self, j: usize) -> T {
        let s = self.sigma[j].sin();
        self.amp[j] * self.amp[j] * s * s * self.env.z_b / (T::of(2.0) * self.zeta[j])
    }

    /// Continuous-spectrum eigenfunction evaluator at `gamma < k_s²`.
    pub fn continuous(&self, gamma: T) -> Result<ContinuousModeEval<T>> {
        ContinuousModeEval::new(&self.env, self.k_w, self.k_s, gamma)
    }

    /// Convenience for `continuous(gamma)?.phi(z)`.
    pub fn phi_gamma(&self, gamma: T, z: T) -> Result<T> {
        Ok(self.continuous(gamma)?.phi(z))
    }

    /// Sub-spectrum restricted to the given positions (kept in ascending
    /// order).
    pub fn select(&self, positions: &[usize]) -> Result<Self> {
        let mut idx = positions.to_vec();
        idx.sort_unstable();
        idx.dedup();
        for &j in &idx {
            self.check(j)?;
        }
        let pick = |v: &[T]| idx.iter().map(|&j| v[j]).collect::<Vec<_>>();
        Ok(Self {
            env: self.env,
            omega: self.omega,
            k_w: self.k_w,
            k_s: self.k_s,
            sigma: pick(&self.sigma),
            beta: pick(&self.beta),
            zeta: pick(&self.zeta),
            amp: pick(&self.amp),
            k_wj: pick(&self.k_wj),
            number: idx.iter().map(|&j| self.number[j]).collect(),
            dropped_near_cutoff: self.dropped_near_cutoff,
        })
    }
}

/// Improper eigenfunction of the continuous spectrum at `gamma`.
#[derive(Debug, Clone, Copy)]
pub struct ContinuousModeEval<T> {
    pub gamma: T,
    pub eta: T,
    pub xi: T,
    pub amplitude: T,
    z_b: T,
    density_ratio: T,
}

impl<T: Real> ContinuousModeEval<T> {
    pub fn new(env: &EnvironmentParams<T>, k_w: T, k_s: T, gamma: T) -> Result<Self> {
        let limit = k_s * k_s;
        if !(gamma < limit) {
            return Err(Error::DomainError { gamma: gamma.to_f64_lossy(), limit: limit.to_f64_lossy() });
        }
        let eta = env.z_b * (k_w * k_w - gamma).sqrt();
        let xi = env.z_b * (limit - gamma).sqrt();
        let ratio = env.rho_s / env.rho_w;
        let (se, ce) = (eta.sin(), eta.cos());
        let denom = T::PI() * (xi * xi * se * se + ratio * ratio * eta * eta * ce * ce);
        let amp2 = xi * env.rho_s * env.z_b / denom;
        Ok(Self { gamma, eta, xi, amplitude: amp2.sqrt(), z_b: env.z_b, density_ratio: ratio })
    }

    /// Vertical wavenumber in water, `eta / z_b`.
    pub fn k_water(&self) -> T {
        self.eta / self.z_b
    }

    pub fn phi(&self, z: T) -> T {
        let zb = self.z_b;
        if z <= zb {
            self.amplitude * (self.eta * z / zb).sin()
        } else {
            let arg = self.xi * (z - zb) / zb;
            self.amplitude
                * (self.eta.sin() * arg.cos()
                    + self.density_ratio * self.eta / self.xi * self.eta.cos() * arg.sin())
        }
    }
}

/// Initial mean modal powers `|a_j0|² = (beta_j / 4) phi_j(z0)²`.
pub fn source_amplitudes<T: Real>(modes: &ModeSet<T>, src: &SourceSpec<T>) -> Result<Vec<T>> {
    src.validate(modes.env.z_b)?;
    Ok((0..modes.len())
        .map(|j| {
            let p = modes.phi_unchecked(j, src.z0);
            modes.beta[j] * T::of(0.25) * p * p
        })
        .collect())
}
