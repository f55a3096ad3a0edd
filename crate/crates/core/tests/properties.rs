//! Structural invariants checked over randomly generated inputs.

mod common;

use common::{orthonormality_error, sign_scan_count};
use num_complex::Complex;
use proptest::prelude::*;
use shallowmode::coupling::{gamma_coupling, sediment_damping, CouplingModel};
use shallowmode::field::{correlation_curve, ArrayGeometry, ForwardOptions};
use shallowmode::inversion::{minimize, misfit, InverseProblem, InversionOptions, KnownParams, ParamBounds, SeabedParams, SimplexOptions};
use shallowmode::modes::{solve_modes, EnvironmentParams, SourceSpec};
use shallowmode::moments::{
    initial_second_moments, propagate, propagate_s_dense, propagate_s_with, second_moment_ode_options, spectral_summary,
    SecondMomentOperator,
};
use shallowmode::montecarlo::{simulate_powers, SimulationOptions};
use shallowmode::numerics::DenseMatrix;
use shallowmode::pipeline::{read_snapshots_csv, write_snapshots_csv, Snapshot, SnapshotSet};

fn environment() -> impl Strategy<Value = EnvironmentParams<f64>> {
    (1400.0..1550.0f64, 20.0..300.0f64, 1000.0..1100.0f64, 1.2..2.5f64, 20.0..200.0f64, 0.0..0.08f64)
        .prop_map(|(c_w, dc, rho_w, ratio, z_b, nu_s)| EnvironmentParams {
            c_w,
            c_s: c_w + dc,
            rho_w,
            rho_s: rho_w * ratio,
            z_b,
            nu_s,
            sigma: 0.002,
            ell_v: 30.0,
            ell_h: 100.0,
        })
}

fn omega(f: f64) -> f64 {
    2.0 * std::f64::consts::PI * f
}

/// Symmetric coupling with positive off-diagonal entries and zero row sums.
fn coupling_matrix(max_n: usize) -> impl Strategy<Value = DenseMatrix<f64>> {
    (2..=max_n).prop_flat_map(|n| {
        prop::collection::vec(1e-4..0.02f64, n * (n - 1) / 2).prop_map(move |upper| {
            let mut g = DenseMatrix::zeros(n, n);
            let mut k = 0;
            for j in 0..n {
                for l in (j + 1)..n {
                    g[(j, l)] = upper[k];
                    g[(l, j)] = upper[k];
                    k += 1;
                }
            }
            for j in 0..n {
                let s: f64 = (0..n).filter(|l| *l != j).map(|l| g[(j, l)]).sum();
                g[(j, j)] = -s;
            }
            g
        })
    })
}

fn model_with_lambda(max_n: usize) -> impl Strategy<Value = (CouplingModel<f64>, Vec<f64>)> {
    coupling_matrix(max_n).prop_flat_map(|g| {
        let n = g.rows();
        (prop::collection::vec(0.0..5e-3f64, n), prop::collection::vec(0.1..2.0f64, n))
            .prop_map(move |(lambda, q0)| (CouplingModel::from_parts(g.clone(), vec![0.0; n], lambda), q0))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn root_count_matches_sign_scan(env in environment(), f in 50.0..1500.0f64) {
        let modes = solve_modes(&env, omega(f)).unwrap();
        prop_assert_eq!(modes.len() + modes.dropped_near_cutoff(), sign_scan_count(&env, omega(f), 1_000_000));
    }

    #[test]
    fn modes_are_orthonormal(env in environment(), f in 50.0..1000.0f64) {
        let modes = solve_modes(&env, omega(f)).unwrap();
        prop_assume!(!modes.is_empty());
        prop_assert!(orthonormality_error(&modes) < 1e-8);
    }

    #[test]
    fn mode_count_is_monotone_in_frequency(env in environment(), f in 50.0..1500.0f64, df in 0.0..200.0f64) {
        let a = solve_modes(&env, omega(f)).unwrap();
        let b = solve_modes(&env, omega(f + df)).unwrap();
        prop_assert!(a.len() + a.dropped_near_cutoff() <= b.len() + b.dropped_near_cutoff());
    }

    #[test]
    fn eigenfunctions_satisfy_the_layer_equations(env in environment(), f in 50.0..800.0f64, u in 0.05..0.9f64) {
        let w = omega(f);
        let modes = solve_modes(&env, w).unwrap();
        prop_assume!(!modes.is_empty());
        let h = 0.01 / (w / env.c_w);
        for (z, k) in [(u * env.z_b, w / env.c_w), (env.z_b * (1.0 + u), w / env.c_s)] {
            for j in 0..modes.len() {
                let phi = |z| modes.phi(j, z).unwrap();
                // fourth-order central difference
                let second = (-phi(z + 2.0 * h) + 16.0 * phi(z + h) - 30.0 * phi(z) + 16.0 * phi(z - h) - phi(z - 2.0 * h))
                    / (12.0 * h * h);
                let beta2 = modes.beta()[j] * modes.beta()[j];
                let residual = second + k * k * phi(z) - beta2 * phi(z);
                let scale = modes.amplitude()[j] * beta2;
                prop_assert!(residual.abs() < 1e-6 * scale, "mode {}: residual {}", j, residual);
            }
        }
    }

    #[test]
    fn gamma_is_symmetric_nonnegative_with_zero_rows(env in environment(), f in 100.0..600.0f64) {
        let modes = solve_modes(&env, omega(f)).unwrap();
        prop_assume!(modes.len() >= 2);
        let g = gamma_coupling(&modes).unwrap();
        let n = modes.len();
        let scale = g.max_abs();
        for j in 0..n {
            let mut row = 0.0;
            for l in 0..n {
                row += g[(j, l)];
                if j != l {
                    prop_assert!(g[(j, l)] >= 0.0);
                    prop_assert_eq!(g[(j, l)], g[(l, j)]);
                }
            }
            prop_assert!(row.abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn coefficients_scale_with_medium_parameters(env in environment(), f in 100.0..600.0f64, factor in 0.2..5.0f64) {
        prop_assume!(env.nu_s > 0.0);
        let modes = solve_modes(&env, omega(f)).unwrap();
        prop_assume!(modes.len() >= 2);
        let g = gamma_coupling(&modes).unwrap();
        let sed = sediment_damping(&modes);
        prop_assert!(sed.iter().all(|v| *v > 0.0));

        let louder = EnvironmentParams { sigma: env.sigma * factor, nu_s: env.nu_s * factor, ..env };
        let m2 = solve_modes(&louder, omega(f)).unwrap();
        let g2 = gamma_coupling(&m2).unwrap();
        let sed2 = sediment_damping(&m2);
        let wider = EnvironmentParams { ell_h: 2.0 * env.ell_h, ..env };
        let g3 = gamma_coupling(&solve_modes(&wider, omega(f)).unwrap()).unwrap();
        let lor = |d: f64, l: f64| l / (1.0 + d * d * l * l);
        for j in 0..modes.len() {
            prop_assert!((sed2[j] - factor * sed[j]).abs() <= 1e-12 * sed2[j]);
            for l in 0..modes.len() {
                prop_assert!((g2[(j, l)] - factor * factor * g[(j, l)]).abs() <= 1e-10 * g2.max_abs());
                if j != l {
                    let d = modes.beta()[l] - modes.beta()[j];
                    let want = g[(j, l)] * lor(d, wider.ell_h) / lor(d, env.ell_h);
                    prop_assert!((g3[(j, l)] - want).abs() <= 1e-10 * g3.max_abs());
                }
            }
        }
    }

    #[test]
    fn power_is_conserved_without_dissipation(g in coupling_matrix(6), x in 0.0..2000.0f64) {
        let n = g.rows();
        let c = CouplingModel::from_parts(g, vec![0.0; n], vec![0.0; n]);
        let q0: Vec<f64> = (0..n).map(|j| 1.0 + j as f64).collect();
        let state = propagate(&c, &q0, x).unwrap();
        let total: f64 = q0.iter().sum();
        prop_assert!((state.q.iter().sum::<f64>() - total).abs() <= 1e-9 * total);
        let s0: f64 = initial_second_moments(&q0).iter().sum();
        prop_assert!((state.s_upper.iter().sum::<f64>() - s0).abs() <= 1e-9 * s0);
    }

    #[test]
    fn propagator_is_entrywise_nonnegative((c, _) in model_with_lambda(8), x in 0.0..3000.0f64) {
        let e = c.a_matrix.scaled(x).expm().unwrap();
        prop_assert!(e.as_slice().iter().all(|v| *v >= -1e-12));
    }

    #[test]
    fn second_moment_decay_is_at_most_twice_the_mean_decay((c, q0) in model_with_lambda(6)) {
        let s = spectral_summary(&c, &q0).unwrap();
        prop_assert!(s.mu <= 2.0 * s.lambda + 1e-12 * (1.0 + s.lambda.abs()));
    }

    #[test]
    fn dense_and_ode_second_moments_agree((c, q0) in model_with_lambda(6), x in 0.0..300.0f64) {
        let dense = propagate_s_dense(&c, &q0, x).unwrap();
        let s0 = initial_second_moments(&q0);
        let mut opts = second_moment_ode_options(&s0);
        opts.rtol = 1e-11;
        opts.atol = 1e-13;
        let (ode, _) = propagate_s_with(&c, &q0, x, &opts).unwrap();
        let scale = dense.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in dense.iter().zip(&ode) {
            prop_assert!((a - b).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn second_moment_operator_is_self_adjoint(
        (c, _) in model_with_lambda(7),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut op = SecondMomentOperator::new(&c.gamma, &c.lambda);
        let m = op.dim();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let t: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (mut at, mut au) = (vec![0.0; m], vec![0.0; m]);
        op.apply(&t, &mut at);
        op.apply(&u, &mut au);
        let lhs: f64 = at.iter().zip(&u).map(|(a, b)| a * b).sum();
        let rhs: f64 = t.iter().zip(&au).map(|(a, b)| a * b).sum();
        let scale = c.gamma.max_abs() * m as f64;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
    }

    #[test]
    fn correlation_is_one_at_zero_lag(env in environment(), f in 200.0..2000.0f64, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let modes = solve_modes(&env, omega(f)).unwrap();
        prop_assume!(!modes.is_empty());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let q: Vec<f64> = (0..modes.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let geom = ArrayGeometry::uniform(1000.0, 0.5 * env.z_b, 16, 0.02 * env.z_b).unwrap();
        let curve = correlation_curve(&modes, &q, &geom, None).unwrap();
        prop_assert!((curve.values[0] - 1.0).abs() < 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn simulated_paths_conserve_power_and_repeat(g in coupling_matrix(4), seed in any::<u64>()) {
        let n = g.rows();
        let c = CouplingModel::from_parts(g, vec![0.0; n], vec![0.0; n]);
        let q0: Vec<f64> = (0..n).map(|j| 1.0 + j as f64).collect();
        let opts = SimulationOptions { x_end: 200.0, dx: 0.5, n_paths: 50, seed, record_every: None };
        let a = simulate_powers(&c, &q0, &opts).unwrap();
        prop_assert!(a.max_balance_error < 1e-10);
        let total: f64 = q0.iter().sum();
        for p in a.final_powers() {
            prop_assert!(p.iter().all(|v| *v >= 0.0));
            if a.clamp_count == 0 {
                prop_assert!((p.iter().sum::<f64>() - total).abs() < 1e-9 * total);
            }
        }
        prop_assert_eq!(a, simulate_powers(&c, &q0, &opts).unwrap());
    }

    #[test]
    fn snapshot_csv_round_trip_is_lossless(
        depths in prop::collection::vec(1.0..100.0f64, 1..6),
        values in prop::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 1..60),
        freq in 10.0..2e4f64,
    ) {
        let nh = depths.len();
        let snapshots: Vec<Snapshot<f64>> = values
            .chunks(nh)
            .filter(|c| c.len() == nh)
            .enumerate()
            .map(|(rep, c)| Snapshot { freq_hz: freq, rep, values: c.iter().map(|(re, im)| Complex::new(*re, *im)).collect() })
            .collect();
        let set = SnapshotSet::new(depths, snapshots).unwrap();
        let mut buf = Vec::new();
        write_snapshots_csv(&set, &mut buf).unwrap();
        let back: SnapshotSet<f64> = read_snapshots_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, set);
    }
}

fn small_problem(bounds: ParamBounds<f64>) -> InverseProblem<f64> {
    let forward = ForwardOptions { n_max: Some(6), include_radiative: false, lag_points: 64, ..Default::default() };
    InverseProblem {
        known: KnownParams { c_w: 1523.0, rho_w: 1000.0, z_b: 110.0 },
        source: SourceSpec { z0: 50.0, x_a: 9000.0 },
        geometry: ArrayGeometry::uniform(9000.0, 60.0, 32, 0.15).unwrap(),
        frequencies: vec![5000.0],
        observed: vec![0.9],
        bounds,
        options: InversionOptions {
            starts: 2,
            forward,
            simplex: SimplexOptions { max_evaluations: 25, ..Default::default() },
            ..Default::default()
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn optimizer_stays_in_bounds_and_misfit_is_reproducible(
        lo in 1550.0..1650.0f64,
        width in 1.0..100.0f64,
        sigma_hi in 1e-3..1e-2f64,
        seed in any::<u64>(),
    ) {
        let mut bounds = ParamBounds::default();
        bounds.lower.c_s = lo;
        bounds.upper.c_s = lo + width;
        bounds.upper.sigma = sigma_hi;
        let mut p = small_problem(bounds);
        p.options.seed = seed;
        let r = minimize(&p).unwrap();
        prop_assert!(p.bounds.contains(&r.phi_hat));
        prop_assert!(r.trace.iter().all(|t| p.bounds.contains(&t.phi) && t.misfit >= 0.0));
        prop_assert!(r.trace.windows(2).all(|w| w[1].best_so_far <= w[0].best_so_far));
        let phi: SeabedParams<f64> = r.phi_hat;
        prop_assert_eq!(misfit(&p, &phi).unwrap().value.to_bits(), misfit(&p, &phi).unwrap().value.to_bits());
    }
}
