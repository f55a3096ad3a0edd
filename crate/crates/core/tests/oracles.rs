//! Closed-form and quadrature results checked against independent
//! evaluations of their defining integrals.

mod common;

use common::*;
use shallowmode::coupling::{alpha_to_nu, appendix_coefficients, gamma_coupling, radiative_damping};
use shallowmode::field::{correlation_value, ArrayGeometry};
use shallowmode::modes::{solve_modes, source_amplitudes, SourceSpec};
use shallowmode::moments::{propagate, weak_dissipation_expansion, MomentState};
use shallowmode::numerics::DenseMatrix;
use shallowmode::overlap::OverlapKernel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn mode_count_matches_sign_scan_at_two_kilohertz() {
    let env = alma_env();
    let modes = solve_modes(&env, omega(2000.0)).unwrap();
    let scan = sign_scan_count(&env, omega(2000.0), 1_000_000);
    assert_eq!(modes.len() + modes.dropped_near_cutoff(), scan);
}

#[test]
fn modes_are_orthonormal_under_density_weight() {
    let env = alma_env();
    for f in [150.0, 700.0, 2000.0] {
        let modes = solve_modes(&env, omega(f)).unwrap();
        assert!(orthonormality_error(&modes) < 1e-8, "f = {f}");
    }
}

#[test]
fn initial_powers_match_direct_evaluation() {
    let env = alma_env();
    let modes = solve_modes(&env, omega(500.0)).unwrap();
    let src = SourceSpec { z0: 37.0, x_a: 1000.0 };
    let q = source_amplitudes(&modes, &src).unwrap();
    for (j, got) in q.iter().enumerate() {
        let a = modes.amplitude()[j] * (modes.sigma()[j] * src.z0 / env.z_b).sin();
        let want = modes.beta()[j] / 4.0 * a * a;
        assert!(rel_err(*got, want) < 1e-12);
    }
}

#[test]
fn overlap_at_zero_wavenumbers_is_analytic() {
    let (ell, l) = (30.0_f64, 110.0_f64);
    let kern = OverlapKernel::new(ell, l).unwrap();
    let want = ell * l - ell * ell * (1.0 - (-l / ell).exp());
    assert!(rel_err(kern.s(0.0, 0.0), want) < 1e-13);
    assert!(rel_err(overlap_oracle(0.0, 0.0, ell, l), want) < 1e-12);
}

#[test]
fn overlap_matches_quadrature_on_random_wavenumbers() {
    let kern = OverlapKernel::new(30.0, 110.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let (k, kp) = (rng.random_range(0.0..50.0), rng.random_range(0.0..50.0));
        let want = overlap_oracle(k, kp, 30.0, 110.0);
        let got = kern.s(k, kp);
        // near-cancelling values are compared against the kernel scale
        let err = (got - want).abs() / want.abs().max(1e-6);
        assert!(err < 1e-8, "k = {k}, k' = {kp}: {got} vs {want}");
    }
}

#[test]
fn gamma_matches_eigenfunction_quadrature_for_three_modes() {
    let env = alma_env();
    let modes = solve_modes(&env, omega(60.0)).unwrap();
    assert_eq!(modes.len(), 3);
    let gamma = gamma_coupling(&modes).unwrap();
    let (want, _, _) = coupling_oracle(&modes);
    for j in 0..3 {
        for l in 0..3 {
            assert!(rel_err(gamma[(j, l)], want[(j, l)]) < 1e-6, "({j}, {l})");
        }
    }
}

#[test]
fn zero_frequency_cross_spectra_match_quadrature_for_two_modes() {
    let env = alma_env();
    let modes = solve_modes(&env, omega(40.0)).unwrap();
    assert_eq!(modes.len(), 2);
    let coeffs = appendix_coefficients(&modes).unwrap();
    let (_, want_s, want_1) = coupling_oracle(&modes);
    for j in 0..2 {
        for l in 0..2 {
            assert!(rel_err(coeffs.gamma_1[(j, l)], want_1[(j, l)]) < 1e-6);
            assert!(rel_err(coeffs.gamma_s[(j, l)], want_s[(j, l)]) < 1e-6);
        }
    }
}

#[test]
fn radiative_leakage_matches_spectral_quadrature() {
    let env = alma_env();
    let modes = solve_modes(&env, omega(60.0)).unwrap();
    let got = radiative_damping(&modes).unwrap();
    let want = radiative_oracle(&modes);
    for j in 0..modes.len() {
        assert!(rel_err(got[j], want[j]) < 1e-6, "mode {j}: {} vs {}", got[j], want[j]);
    }
}

#[test]
fn attenuation_conversion_value() {
    assert!((alpha_to_nu(1.09_f64) - 0.03994).abs() < 5e-6);
}

#[test]
fn weak_dissipation_remainder_is_third_order() {
    let n = 5;
    let gamma = DenseMatrix::from_fn(n, n, |j, l| if j == l { -0.01 * (n - 1) as f64 } else { 0.01 });
    let lambda1 = [1.0, 2.0, 4.0, 8.0, 16.0].map(|v| v * 0.5e-3);
    let exp = weak_dissipation_expansion(&gamma, &lambda1).unwrap();
    let remainder = |delta: f64| {
        let mut a = gamma.clone();
        for j in 0..n {
            a[(j, j)] -= delta * lambda1[j];
        }
        let top = a.symmetric_eigen().unwrap().values[n - 1];
        (-top - exp.lambda_at(delta)).abs()
    };
    let (r2, r4) = (remainder(1e-2), remainder(1e-3));
    let slope = (r2 / r4).log10();
    assert!(slope > 2.7, "slope {slope}");
}

#[test]
fn equipartition_scintillation_at_mid_depth_is_near_one() {
    let env = alma_env();
    let modes = solve_modes(&env, omega(1500.0)).unwrap();
    let n = modes.len();
    assert!(n > 50);
    let total = 1.0;
    let q = vec![total / n as f64; n];
    // uniform on the simplex: E[P_j²] = 2E[P_jP_l], so every packed entry is equal
    let s_upper = vec![total * total * 2.0 / (n * (n + 1)) as f64; n * (n + 1) / 2];
    let state = MomentState { x: 0.0, q, s_upper };
    let s = shallowmode::moments::scintillation_index(&modes, &state, &[55.0]).unwrap();
    assert!((s - 1.0).abs() < 0.1, "scintillation {s}");
}

#[test]
fn equipartition_correlation_matches_direct_quadrature() {
    let env = alma_env();
    let modes = solve_modes(&env, omega(900.0)).unwrap();
    let geom = ArrayGeometry::uniform(9000.0, 60.0, 32, 0.15).unwrap();
    let q = vec![1.0; modes.len()];
    for y in [0.0, 0.3, 1.1, 2.5, 4.0] {
        let got = correlation_value(&modes, &q, &geom, y).unwrap();
        let want = correlation_oracle(&modes, &q, geom.z_m, geom.z_max, y);
        assert!(rel_err(got, want) < 1e-8, "y = {y}");
    }
}

#[test]
fn second_moments_reach_equipartition_value() {
    let n = 4;
    let gamma = DenseMatrix::from_fn(n, n, |j, l| if j == l { -0.03 } else { 0.01 });
    let c = shallowmode::coupling::CouplingModel::from_parts(gamma, vec![0.0; n], vec![0.0; n]);
    let q0 = [3.0, 1.0, 0.0, 0.0];
    let state = propagate(&c, &q0, 5000.0).unwrap();
    let want = 16.0 * 2.0 / (n * (n + 1)) as f64;
    for j in 0..n {
        assert!(rel_err(state.s_upper[shallowmode::moments::packed_index(n, j, j)], want) < 1e-6);
    }
}
