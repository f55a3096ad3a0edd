//! Coupling, leakage and dissipation coefficients of the mode-power
//! diffusion for exponentially correlated index fluctuations.

use log::debug;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::modes::ModeSet;
use crate::numerics::{DenseMatrix, GaussLegendre};
use crate::overlap::OverlapKernel;
use crate::real::Real;

const PANEL_ORDER: usize = 20;
const INITIAL_PANELS: usize = 20;
const MAX_DOUBLINGS: usize = 10;
const SPECTRAL_RTOL: f64 = 1e-6;

/// Guided-mode coupling matrix Γ, the dissipation split Λ = Λ_rad + Λ_sed
/// and the propagation matrix A = Γ - diag(Λ).
#[derive(Debug, Clone, Serialize)]
pub struct CouplingModel<T> {
    pub gamma: DenseMatrix<T>,
    pub lambda_rad: Vec<T>,
    pub lambda_sed: Vec<T>,
    pub lambda: Vec<T>,
    pub a_matrix: DenseMatrix<T>,
}

impl<T: Real> CouplingModel<T> {
    pub fn build(modes: &ModeSet<T>) -> Result<Self> {
        let gamma = gamma_coupling(modes)?;
        let (lambda_rad, lambda_sed) = lambda_dissipation(modes)?;
        Ok(Self::from_parts(gamma, lambda_rad, lambda_sed))
    }

    /// Assembles a model from a given Γ and Λ split (used for synthetic
    /// systems in tests and simulations).
    pub fn from_parts(gamma: DenseMatrix<T>, lambda_rad: Vec<T>, lambda_sed: Vec<T>) -> Self {
        let lambda: Vec<T> = lambda_rad.iter().zip(&lambda_sed).map(|(a, b)| *a + *b).collect();
        let mut a_matrix = gamma.clone();
        for (j, l) in lambda.iter().enumerate() {
            a_matrix[(j, j)] -= *l;
        }
        Self { gamma, lambda_rad, lambda_sed, lambda, a_matrix }
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }
}

/// Coefficients that only affect mode phases: the sine-transform coupling
/// Γˢ, zero-frequency cross-spectra Γ¹, radiative dispersion Λˢ and the
/// evanescent phase rates κ.
#[derive(Debug, Clone, Serialize)]
pub struct AppendixCoefficients<T> {
    pub gamma_s: DenseMatrix<T>,
    pub gamma_1: DenseMatrix<T>,
    pub lambda_s: Vec<T>,
    pub kappa: Vec<T>,
}

fn kernel<T: Real>(modes: &ModeSet<T>) -> Result<OverlapKernel<T>> {
    let env = modes.env();
    OverlapKernel::new(env.ell_v, env.z_b)
}

/// `ω⁴σ²/(ρ_w² c_w⁴)`, written as `k_w⁴σ²/ρ_w²` to stay in range in single
/// precision.
fn medium_prefactor<T: Real>(modes: &ModeSet<T>) -> T {
    let env = modes.env();
    let kw2 = modes.k_w() * modes.k_w();
    kw2 * kw2 * env.sigma * env.sigma / (env.rho_w * env.rho_w)
}

fn lorentzian<T: Real>(delta: T, ell: T) -> T {
    ell / (T::one() + delta * delta * ell * ell)
}

fn sine_lorentzian<T: Real>(delta: T, ell: T) -> T {
    ell * ell * delta / (T::one() + delta * delta * ell * ell)
}

/// Off-diagonal coupling `Γ_jl` with the diagonal set to minus the row sum.
pub fn gamma_coupling<T: Real>(modes: &ModeSet<T>) -> Result<DenseMatrix<T>> {
    pair_matrix(modes, |d, ell| lorentzian(d, ell), false)
}

/// Shared assembly of Γ and Γˢ. `antisymmetric` selects the sine transform,
/// whose horizontal factor is odd in `β_l - β_j`.
fn pair_matrix<T: Real, H>(modes: &ModeSet<T>, horizontal: H, antisymmetric: bool) -> Result<DenseMatrix<T>>
where
    H: Fn(T, T) -> T + Sync,
{
    let n = modes.len();
    let kern = kernel(modes)?;
    let pref = medium_prefactor(modes);
    let ell_h = modes.env().ell_h;
    let (beta, amp, kw) = (modes.beta(), modes.amplitude(), modes.k_wj());
    let quarter = T::of(0.25);
    let two = T::of(2.0);
    let upper: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|j| {
            ((j + 1)..n)
                .map(|l| {
                    let a2 = amp[j] * amp[j] * amp[l] * amp[l] * quarter;
                    // Γˢ_jl uses Δ = β_l - β_j.
                    pref / (two * beta[j] * beta[l]) * horizontal(beta[l] - beta[j], ell_h) * a2 * kern.product_overlap(kw[j], kw[l])
                })
                .collect()
        })
        .collect();
    let mut g = DenseMatrix::zeros(n, n);
    for j in 0..n {
        for l in (j + 1)..n {
            let v = upper[j][l - j - 1];
            g[(j, l)] = v;
            g[(l, j)] = if antisymmetric { -v } else { v };
        }
    }
    for j in 0..n {
        let mut s = T::zero();
        for l in 0..n {
            if l != j {
                s += g[(j, l)];
            }
        }
        g[(j, j)] = -s;
    }
    Ok(g)
}

/// Radiative leakage `Λ_rad` and sediment damping `Λ_sed`.
pub fn lambda_dissipation<T: Real>(modes: &ModeSet<T>) -> Result<(Vec<T>, Vec<T>)> {
    let sed = sediment_damping(modes);
    let rad = radiative_damping(modes)?;
    Ok((rad, sed))
}

/// Attenuation in the absorbing sediment.
pub fn sediment_damping<T: Real>(modes: &ModeSet<T>) -> Vec<T> {
    let env = modes.env();
    let omega = modes.omega();
    (0..modes.len())
        .map(|j| env.nu_s * omega * omega / (modes.beta()[j] * env.c_s * env.c_s * env.rho_s) * modes.sediment_tail_integral(j))
        .collect()
}

/// Leakage into the continuous spectrum.
pub fn radiative_damping<T: Real>(modes: &ModeSet<T>) -> Result<Vec<T>> {
    radiative_integral(modes, "radiative leakage", |d, ell| lorentzian(d, ell))
}

/// `∫₀^{k_s²} ω⁴σ²/(2√γ β_j ρ_w² c_w⁴) H(√γ - β_j) (A_j²A_γ²/4)[...] dγ`
/// for a horizontal kernel `H`.
///
/// With `γ = u²` the `1/√γ` singularity disappears; a second substitution
/// `u = k_s sin θ` removes the square-root behaviour of `A_γ²` at `u = k_s`.
fn radiative_integral<T: Real, H>(modes: &ModeSet<T>, what: &'static str, horizontal: H) -> Result<Vec<T>>
where
    H: Fn(T, T) -> T + Sync,
{
    let n = modes.len();
    if n == 0 || modes.env().sigma == T::zero() {
        return Ok(vec![T::zero(); n]);
    }
    let kern = kernel(modes)?;
    let pref = medium_prefactor(modes);
    let ell_h = modes.env().ell_h;
    let ks = modes.k_s();
    let z_b = modes.env().z_b;
    let quarter = T::of(0.25);
    let eval = |theta: T, out: &mut [T]| -> Result<()> {
        let (st, ct) = theta.sin_cos();
        let u = ks * st;
        let jac = ks * ct;
        if jac <= T::zero() {
            return Ok(());
        }
        let cont = modes.continuous(u * u)?;
        let k_gamma = cont.eta / z_b;
        let ag2 = cont.amplitude * cont.amplitude;
        for (j, o) in out.iter_mut().enumerate() {
            let bj = modes.beta()[j];
            let aj = modes.amplitude()[j];
            let overlap = aj * aj * ag2 * quarter * kern.product_overlap(modes.k_wj()[j], k_gamma);
            *o = pref / bj * horizontal(u - bj, ell_h) * overlap * jac;
        }
        Ok(())
    };
    let panels = oscillation_panels(modes.k_w() - (modes.k_w() * modes.k_w() - ks * ks).sqrt(), z_b);
    adaptive_vector_integral(n, T::zero(), T::FRAC_PI_2(), panels, what, eval)
}

/// Starting panel count for a spectral integral whose vertical wavenumber
/// sweeps a range `span`: the overlap oscillates like `e^{2i k L}`, and a
/// 20-point panel resolves about two such periods.
fn oscillation_panels<T: Real>(span: T, z_b: T) -> usize {
    let periods = (span * z_b / T::PI()).to_f64_lossy();
    (periods / 2.0).ceil().max(0.0) as usize
}

/// Integrates a vector-valued function on `[a, b]` with composite
/// Gauss–Legendre, doubling the panel count until every component changes by
/// less than the relative tolerance.
fn adaptive_vector_integral<T: Real, F>(
    n: usize,
    a: T,
    b: T,
    initial_panels: usize,
    what: &'static str,
    f: F,
) -> Result<Vec<T>>
where
    F: Fn(T, &mut [T]) -> Result<()> + Sync,
{
    let gl = GaussLegendre::<T>::new(PANEL_ORDER);
    let mut panels = initial_panels.max(INITIAL_PANELS);
    let mut previous: Option<Vec<T>> = None;
    let rtol = T::tol(SPECTRAL_RTOL);
    for _ in 0..=MAX_DOUBLINGS {
        let points = gl.composite_points(a, b, panels);
        let chunk = PANEL_ORDER.max(points.len() / 64);
        let current = points
            .par_chunks(chunk)
            .map(|pts| -> Result<Vec<T>> {
                let mut acc = vec![T::zero(); n];
                let mut buf = vec![T::zero(); n];
                for &(x, w) in pts {
                    buf.iter_mut().for_each(|v| *v = T::zero());
                    f(x, &mut buf)?;
                    for (a, v) in acc.iter_mut().zip(&buf) {
                        *a += w * *v;
                    }
                }
                Ok(acc)
            })
            .collect::<Result<Vec<Vec<T>>>>()?
            .into_iter()
            .fold(vec![T::zero(); n], |mut x, y| {
                // sequential fold keeps the sum independent of the thread count
                x.iter_mut().zip(&y).for_each(|(a, b)| *a += *b);
                x
            });
        if let Some(prev) = &previous {
            let scale = current.iter().fold(T::zero(), |m, v| m.max(v.abs()));
            let floor = scale * T::tol(1e-12);
            let converged = current
                .iter()
                .zip(prev)
                .all(|(c, p)| (*c - *p).abs() <= rtol * c.abs() + floor);
            if converged {
                debug!("{what}: converged with {panels} panels");
                return Ok(current);
            }
        }
        previous = Some(current);
        panels *= 2;
    }
    Err(Error::QuadratureFailure { what: what.to_string(), tol: SPECTRAL_RTOL })
}

/// Γˢ, Γ¹, Λˢ and κ.
pub fn appendix_coefficients<T: Real>(modes: &ModeSet<T>) -> Result<AppendixCoefficients<T>> {
    let n = modes.len();
    let gamma_s = pair_matrix(modes, |d, ell| sine_lorentzian(d, ell), true)?;
    let kern = kernel(modes)?;
    let pref = medium_prefactor(modes);
    let ell_h = modes.env().ell_h;
    let (beta, amp, kw) = (modes.beta(), modes.amplitude(), modes.k_wj());
    let quarter = T::of(0.25);
    let two = T::of(2.0);
    let gamma_1 = DenseMatrix::from_fn(n, n, |j, l| {
        let a2 = amp[j] * amp[j] * amp[l] * amp[l] * quarter;
        pref / (two * beta[j] * beta[l]) * ell_h * a2 * kern.square_overlap(kw[j], kw[l])
    });
    let lambda_s = radiative_integral(modes, "radiative dispersion", |d, ell| sine_lorentzian(d, ell))?;
    let kappa = evanescent_phase(modes)?;
    Ok(AppendixCoefficients { gamma_s, gamma_1, lambda_s, kappa })
}

/// `κ_j = ∫_{-∞}^0 ω⁴σ²/(2√|γ| β_j ρ_w²c_w⁴) (A_j²A_γ²/4)[...]
///        (1/ℓ_h + √|γ|)/((1/ℓ_h + √|γ|)² + β_j²) dγ`, truncated at
/// `√|γ| = 20/ℓ_h + 20β_1` and integrated in `u = √|γ|`.
fn evanescent_phase<T: Real>(modes: &ModeSet<T>) -> Result<Vec<T>> {
    let n = modes.len();
    if n == 0 || modes.env().sigma == T::zero() {
        return Ok(vec![T::zero(); n]);
    }
    let kern = kernel(modes)?;
    let pref = medium_prefactor(modes);
    let ell_h = modes.env().ell_h;
    let z_b = modes.env().z_b;
    let u_max = T::of(20.0) / ell_h + T::of(20.0) * modes.beta()[0];
    let quarter = T::of(0.25);
    let integrand = |u: T, out: &mut [T]| -> Result<()> {
        let cont = modes.continuous(-u * u)?;
        let k_gamma = cont.eta / z_b;
        let ag2 = cont.amplitude * cont.amplitude;
        let a = ell_h.recip() + u;
        for (j, o) in out.iter_mut().enumerate() {
            let bj = modes.beta()[j];
            let aj = modes.amplitude()[j];
            let overlap = aj * aj * ag2 * quarter * kern.product_overlap(modes.k_wj()[j], k_gamma);
            *o = pref / bj * a / (a * a + bj * bj) * overlap;
        }
        Ok(())
    };
    let k_top = (modes.k_w() * modes.k_w() + u_max * u_max).sqrt();
    let panels = oscillation_panels(k_top - modes.k_w(), z_b);
    let kappa = adaptive_vector_integral(n, T::zero(), u_max, panels, "evanescent phase", integrand)?;
    let mut tail = vec![T::zero(); n];
    integrand(u_max, &mut tail)?;
    let bound = tail.iter().fold(T::zero(), |m, v| m.max(v.abs())) * u_max;
    debug!("evanescent phase truncated at u = {u_max}; tail bound ~ {bound}");
    Ok(kappa)
}

/// Sediment attenuation in dB per wavelength to the dimensionless
/// dissipation `ν_s`.
pub fn alpha_to_nu<T: Real>(alpha_db_per_wavelength: T) -> T {
    alpha_db_per_wavelength * T::LN_10() / (T::of(20.0) * T::PI())
}

pub fn nu_to_alpha<T: Real>(nu_s: T) -> T {
    nu_s * T::of(20.0) * T::PI() / T::LN_10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::{solve_modes, EnvironmentParams};

    fn env() -> EnvironmentParams<f64> {
        EnvironmentParams {
            c_w: 1523.0,
            c_s: 1630.0,
            rho_w: 1000.0,
            rho_s: 1700.0,
            z_b: 110.0,
            nu_s: 0.04,
            sigma: 0.002,
            ell_v: 30.0,
            ell_h: 100.0,
        }
    }

    fn omega(f: f64) -> f64 {
        2.0 * std::f64::consts::PI * f
    }

    #[test]
    fn gamma_structure() {
        let m = solve_modes(&env(), omega(200.0)).unwrap();
        let g = gamma_coupling(&m).unwrap();
        let n = m.len();
        for j in 0..n {
            let mut row = 0.0;
            let mut scale: f64 = 0.0;
            for l in 0..n {
                row += g[(j, l)];
                scale = scale.max(g[(j, l)].abs());
                if l != j {
                    assert!(g[(j, l)] >= 0.0);
                    assert_eq!(g[(j, l)], g[(l, j)]);
                }
            }
            assert!(row.abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn no_fluctuations_no_coupling() {
        let mut e = env();
        e.sigma = 0.0;
        let m = solve_modes(&e, omega(200.0)).unwrap();
        let c = CouplingModel::build(&m).unwrap();
        assert_eq!(c.gamma.max_abs(), 0.0);
        assert!(c.lambda_rad.iter().all(|v| *v == 0.0));
        assert!(c.lambda_sed.iter().all(|v| *v > 0.0));
        let app = appendix_coefficients(&m).unwrap();
        assert_eq!(app.gamma_s.max_abs(), 0.0);
        assert_eq!(app.gamma_1.max_abs(), 0.0);
        assert!(app.lambda_s.iter().chain(&app.kappa).all(|v| *v == 0.0));
    }

    #[test]
    fn no_sediment_damping() {
        let mut e = env();
        e.nu_s = 0.0;
        let m = solve_modes(&e, omega(200.0)).unwrap();
        let (rad, sed) = lambda_dissipation(&m).unwrap();
        assert!(sed.iter().all(|v| *v == 0.0));
        assert!(rad.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn single_mode_has_zero_coupling() {
        let e = env();
        let mut f = 10.0;
        let m = loop {
            let m = solve_modes(&e, omega(f)).unwrap();
            if m.len() == 1 {
                break m;
            }
            f += 1.0;
        };
        let g = gamma_coupling(&m).unwrap();
        assert_eq!(g.rows(), 1);
        assert_eq!(g[(0, 0)], 0.0);
    }

    #[test]
    fn gamma_scales_with_sigma_squared() {
        let m1 = solve_modes(&env(), omega(150.0)).unwrap();
        let mut e2 = env();
        e2.sigma *= 3.0;
        let m2 = solve_modes(&e2, omega(150.0)).unwrap();
        let g1 = gamma_coupling(&m1).unwrap();
        let g2 = gamma_coupling(&m2).unwrap();
        for j in 0..m1.len() {
            for l in 0..m1.len() {
                assert!((g2[(j, l)] - 9.0 * g1[(j, l)]).abs() <= 1e-12 * g2[(j, l)].abs().max(1e-300));
            }
        }
    }

    #[test]
    fn gamma_s_antisymmetric_with_row_sum_diagonal() {
        let m = solve_modes(&env(), omega(150.0)).unwrap();
        let app = appendix_coefficients(&m).unwrap();
        let n = m.len();
        for j in 0..n {
            let mut s = 0.0;
            for l in 0..n {
                if l != j {
                    assert_eq!(app.gamma_s[(j, l)], -app.gamma_s[(l, j)]);
                    s += app.gamma_s[(j, l)];
                }
            }
            assert!((app.gamma_s[(j, j)] + s).abs() <= 1e-14 * s.abs().max(1e-300));
            assert!(app.kappa[j].is_finite());
        }
    }

    #[test]
    fn attenuation_conversion() {
        assert_eq!(alpha_to_nu(0.0f64), 0.0);
        assert!((alpha_to_nu(1.09f64) - 0.039944).abs() < 1e-5);
        for x in [0.1f64, 1.09, 3.7] {
            assert!((nu_to_alpha(alpha_to_nu(x)) - x).abs() < 4.0 * f64::EPSILON * x);
        }
    }
}
