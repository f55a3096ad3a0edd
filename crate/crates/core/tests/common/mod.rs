//! Independent quadrature oracles shared by the integration tests.
#![allow(dead_code)]

use shallowmode::modes::{EnvironmentParams, ModeSet};
use shallowmode::numerics::{DenseMatrix, GaussLegendre};

pub fn omega(freq_hz: f64) -> f64 {
    2.0 * std::f64::consts::PI * freq_hz
}

pub fn alma_env() -> EnvironmentParams<f64> {
    EnvironmentParams {
        c_w: 1523.0,
        c_s: 1630.0,
        rho_w: 1000.0,
        rho_s: 1700.0,
        z_b: 110.0,
        nu_s: shallowmode::coupling::alpha_to_nu(1.09),
        sigma: 0.002,
        ell_v: 30.0,
        ell_h: 100.0,
    }
}

/// Number of sign changes of `ρ_w sin s √(V²-s²) + ρ_s s cos s` on a
/// uniform grid of `(0, V]`. The function is positive just above 0, so no
/// root is lost at the left end.
pub fn sign_scan_count(env: &EnvironmentParams<f64>, omega: f64, points: usize) -> usize {
    let kw = omega / env.c_w;
    let ks = omega / env.c_s;
    let v = env.z_b * (kw * kw - ks * ks).sqrt();
    let d = |s: f64| env.rho_w * s.sin() * (v * v - s * s).max(0.0).sqrt() + env.rho_s * s * s.cos();
    let mut count = 0;
    let mut prev = d(v / points as f64);
    for i in 2..=points {
        let cur = d(v * i as f64 / points as f64);
        if (prev > 0.0) != (cur > 0.0) && prev != 0.0 {
            count += 1;
        }
        if cur != 0.0 {
            prev = cur;
        }
    }
    count
}

/// Composite Gauss–Legendre nodes and weights on `[a, b]`.
pub fn gl_nodes(a: f64, b: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    GaussLegendre::<f64>::new(order).composite_points(a, b, panels)
}

/// Largest `|(φ_j, φ_l) - δ_jl|` under the `1/ρ`-weighted product: water
/// part by quadrature, sediment part from the exponential tail.
pub fn orthonormality_error(modes: &ModeSet<f64>) -> f64 {
    let env = modes.env();
    let n = modes.len();
    let top = modes.sigma().iter().cloned().fold(0.0, f64::max);
    let panels = (top / std::f64::consts::PI).ceil() as usize + 8;
    let nodes = gl_nodes(0.0, env.z_b, panels, 20);
    let table: Vec<Vec<f64>> = (0..n).map(|j| nodes.iter().map(|(z, _)| modes.phi(j, *z).unwrap()).collect()).collect();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for l in j..n {
            let water: f64 = nodes.iter().enumerate().map(|(i, (_, w))| w * table[j][i] * table[l][i]).sum::<f64>() / env.rho_w;
            let tail = modes.phi(j, env.z_b).unwrap() * modes.phi(l, env.z_b).unwrap() * env.z_b
                / (env.rho_s * (modes.zeta()[j] + modes.zeta()[l]));
            let target = if j == l { 1.0 } else { 0.0 };
            worst = worst.max((water + tail - target).abs());
        }
    }
    worst
}

/// `g(z_i) = ∫_0^{z_i} e^{-(z_i - s)/ℓ} f(s) ds` at ascending nodes,
/// accumulated node to node.
fn running_convolution(f: &dyn Fn(f64) -> f64, nodes: &[(f64, f64)], ell: f64) -> Vec<f64> {
    let inner = GaussLegendre::<f64>::new(6);
    let mut out = Vec::with_capacity(nodes.len());
    let mut prev = 0.0;
    let mut acc = 0.0;
    for &(z, _) in nodes {
        let step = inner.integrate(prev, z, |s| (-(z - s) / ell).exp() * f(s));
        acc = acc * (-(z - prev) / ell).exp() + step;
        out.push(acc);
        prev = z;
    }
    out
}

/// `∫₀^L ∫₀^L e^{-|z-z'|/ℓ} f(z) g(z') dz dz'`, split along the diagonal so
/// each half is an iterated integral with a smooth integrand.
pub fn exp_kernel_integral(f: &dyn Fn(f64) -> f64, g: &dyn Fn(f64) -> f64, ell: f64, l: f64, panels: usize) -> f64 {
    let nodes = gl_nodes(0.0, l, panels, 20);
    let hg = running_convolution(g, &nodes, ell);
    let hf = running_convolution(f, &nodes, ell);
    nodes.iter().enumerate().map(|(i, (z, w))| w * (f(*z) * hg[i] + g(*z) * hf[i])).sum::<f64>()
}

/// [`exp_kernel_integral`] with panel doubling until the change is below
/// `rtol` relative to the value (or to `floor` when the value is tiny).
pub fn exp_kernel_integral_converged(
    f: &dyn Fn(f64) -> f64,
    g: &dyn Fn(f64) -> f64,
    ell: f64,
    l: f64,
    max_wavenumber: f64,
    rtol: f64,
    floor: f64,
) -> f64 {
    // a 20-point panel per wavelength is already near machine precision
    let mut panels = (max_wavenumber * l / (2.0 * std::f64::consts::PI)).ceil() as usize + 2;
    let mut prev = exp_kernel_integral(f, g, ell, l, panels);
    for _ in 0..8 {
        panels *= 2;
        let cur = exp_kernel_integral(f, g, ell, l, panels);
        if (cur - prev).abs() <= rtol * cur.abs() + floor {
            return cur;
        }
        prev = cur;
    }
    panic!("kernel quadrature did not converge");
}

/// Overlap `½∫∫ e^{-|z-z'|/ℓ} cos(kz) cos(k'z')`: the inner integral in
/// closed form, the outer by Gauss-Legendre with compensated summation. Near-zero overlaps need the cancellation-free inner part.
pub fn overlap_oracle(k: f64, kp: f64, ell: f64, l: f64) -> f64 {
    let a = 1.0 / ell;
    let d = a * a + kp * kp;
    let (cl, sl) = ((kp * l).cos(), (kp * l).sin());
    let inner = move |z: f64| {
        let (c, s) = ((kp * z).cos(), (kp * z).sin());
        let left = a * c + kp * s - a * (-a * z).exp();
        let right = a * c - kp * s + (-a * (l - z)).exp() * (kp * sl - a * cl);
        (left + right) / d
    };
    let outer = |panels: usize| {
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for (z, w) in gl_nodes(0.0, l, panels, 20) {
            let term = w * (k * z).cos() * inner(z);
            let t = sum + term;
            comp += if sum.abs() >= term.abs() { (sum - t) + term } else { (term - t) + sum };
            sum = t;
        }
        0.5 * (sum + comp)
    };
    // 20-point panels of a quarter wavelength (and at most half a decay
    // length) are exact to round-off for this smooth integrand; a doubled
    // grid guards against a bad panel count.
    let span = std::f64::consts::FRAC_PI_2 / k.abs().max(kp.abs()).max(a);
    let panels = (l / span).ceil() as usize + 4;
    let coarse = outer(panels);
    let fine = outer(2 * panels);
    assert!((fine - coarse).abs() <= 1e-15 * ell * l + 1e-12 * fine.abs(), "overlap quadrature not converged");
    fine
}

/// Double-exponential quadrature on the open interval `(a, b)`, refined
/// until successive levels agree to `rtol`.
pub fn tanh_sinh(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rtol: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let eval = |t: f64| -> f64 {
        let s = std::f64::consts::FRAC_PI_2 * t.sinh();
        let x = mid + half * s.tanh();
        if x <= a || x >= b {
            return 0.0;
        }
        let w = half * std::f64::consts::FRAC_PI_2 * t.cosh() / (s.cosh() * s.cosh());
        w * f(x)
    };
    let t_max = 4.0;
    let mut h = 0.5;
    let mut sum = eval(0.0);
    let mut k = 1;
    while k as f64 * h <= t_max {
        sum += eval(k as f64 * h) + eval(-(k as f64) * h);
        k += 1;
    }
    let mut estimate = sum * h;
    for _ in 0..10 {
        h *= 0.5;
        let mut k = 1;
        while k as f64 * h <= t_max {
            sum += eval(k as f64 * h) + eval(-(k as f64) * h);
            k += 2;
        }
        let next = sum * h;
        if (next - estimate).abs() <= rtol * next.abs() {
            return next;
        }
        estimate = next;
    }
    estimate
}

fn prefactor(modes: &ModeSet<f64>) -> f64 {
    let env = modes.env();
    modes.omega().powi(4) * env.sigma * env.sigma / (env.rho_w * env.rho_w * env.c_w.powi(4))
}

/// `∫∫ R(z,z') f(z) g(z')` over the water column with the vertical
/// correlation `R = e^{-|z-z'|/ℓ_v}/2` (fluctuation variance `σ²/2`).
fn mode_kernel_integral(modes: &ModeSet<f64>, f: &dyn Fn(f64) -> f64, g: &dyn Fn(f64) -> f64) -> f64 {
    let env = modes.env();
    let kmax = 2.0 * modes.k_w();
    0.5 * exp_kernel_integral_converged(f, g, env.ell_v, env.z_b, kmax, 1e-12, 0.0)
}

/// `∫₀^∞ e^{-x/ℓ} h(x) dx` by composite quadrature truncated at 60ℓ.
fn horizontal_integral(ell: f64, h: &dyn Fn(f64) -> f64, wavenumber: f64) -> f64 {
    let x_max = 60.0 * ell;
    let panels = (wavenumber * x_max / std::f64::consts::PI).ceil() as usize + 60;
    gl_nodes(0.0, x_max, panels, 20).iter().map(|(x, w)| w * (-x / ell).exp() * h(*x)).sum()
}

/// Γ, Γˢ (both from the product `φ_jφ_l`) and Γ¹ (from `φ_j²`, `φ_l²`)
/// evaluated from their defining integrals.
pub fn coupling_oracle(modes: &ModeSet<f64>) -> (DenseMatrix<f64>, DenseMatrix<f64>, DenseMatrix<f64>) {
    let n = modes.len();
    let pref = prefactor(modes);
    let ell_h = modes.env().ell_h;
    let beta = modes.beta().to_vec();
    let mut gamma = DenseMatrix::zeros(n, n);
    let mut gamma_s = DenseMatrix::zeros(n, n);
    let mut gamma_1 = DenseMatrix::zeros(n, n);
    let phi = |j: usize| move |z: f64| modes.phi(j, z).unwrap();
    for j in 0..n {
        for l in 0..n {
            let (pj, pl) = (phi(j), phi(l));
            let sq_j = move |z: f64| pj(z) * pj(z);
            let sq_l = move |z: f64| pl(z) * pl(z);
            let zero_freq = horizontal_integral(ell_h, &|_| 1.0, 0.0);
            gamma_1[(j, l)] = pref / (2.0 * beta[j] * beta[l]) * zero_freq * mode_kernel_integral(modes, &sq_j, &sq_l);
            if j == l {
                continue;
            }
            let prod = move |z: f64| pj(z) * pl(z);
            let vertical = mode_kernel_integral(modes, &prod, &prod);
            let delta = beta[l] - beta[j];
            let cosine = horizontal_integral(ell_h, &|x| (delta * x).cos(), delta.abs());
            let sine = horizontal_integral(ell_h, &|x| (delta * x).sin(), delta.abs());
            gamma[(j, l)] = pref / (2.0 * beta[j] * beta[l]) * cosine * vertical;
            gamma_s[(j, l)] = pref / (2.0 * beta[j] * beta[l]) * sine * vertical;
        }
    }
    for j in 0..n {
        let rg: f64 = (0..n).filter(|l| *l != j).map(|l| gamma[(j, l)]).sum();
        let rs: f64 = (0..n).filter(|l| *l != j).map(|l| gamma_s[(j, l)]).sum();
        gamma[(j, j)] = -rg;
        gamma_s[(j, j)] = -rs;
    }
    (gamma, gamma_s, gamma_1)
}

/// Radiative leakage from its defining integral over `γ ∈ (0, k_s²)`.
pub fn radiative_oracle(modes: &ModeSet<f64>) -> Vec<f64> {
    let pref = prefactor(modes);
    let ell_h = modes.env().ell_h;
    let ks2 = modes.k_s() * modes.k_s();
    (0..modes.len())
        .map(|j| {
            let bj = modes.beta()[j];
            let integrand = |gamma: f64| {
                let root = gamma.sqrt();
                let prod = |z: f64| modes.phi(j, z).unwrap() * modes.phi_gamma(gamma, z).unwrap();
                let lor = ell_h / (1.0 + (root - bj).powi(2) * ell_h * ell_h);
                pref / (2.0 * root * bj) * lor * mode_kernel_integral(modes, &prod, &prod)
            };
            tanh_sinh(&integrand, 0.0, ks2, 1e-10)
        })
        .collect()
}

/// Aperture-averaged correlation `∫_{z_m}^{z_M - y} Σ Q_j/β_j φ_j(z)φ_j(z+y) dz / (L - y)`.
pub fn correlation_oracle(modes: &ModeSet<f64>, q: &[f64], z_m: f64, z_max: f64, y: f64) -> f64 {
    let top = modes.k_wj().iter().cloned().fold(0.0, f64::max);
    let panels = (2.0 * top * (z_max - z_m) / std::f64::consts::PI).ceil() as usize + 4;
    let nodes = gl_nodes(z_m, z_max - y, panels, 20);
    let sum: f64 = nodes
        .iter()
        .map(|(z, w)| w * (0..modes.len()).map(|j| q[j] / modes.beta()[j] * modes.phi(j, *z).unwrap() * modes.phi(j, z + y).unwrap()).sum::<f64>())
        .sum();
    sum / (z_max - z_m - y)
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}
