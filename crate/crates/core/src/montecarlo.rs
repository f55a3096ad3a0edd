//! Monte Carlo simulation of the mode-power diffusion and synthetic
//! hydrophone snapshots.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::CouplingModel;
use crate::error::{Error, Result};
use crate::field::ArrayGeometry;
use crate::modes::ModeSet;
use crate::moments::{packed_index, packed_len};
use crate::pipeline::{Snapshot, SnapshotSet};
use crate::real::Real;

/// Upper bound on `dx * max_j(|Γ_jj| + Λ_j)` accepted by the integrator.
pub const MAX_STEP_PRODUCT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOptions<T> {
    pub x_end: T,
    pub dx: T,
    pub n_paths: usize,
    pub seed: u64,
    /// Record every `record_every`-th step; the end point is always kept.
    pub record_every: Option<usize>,
}

/// One trajectory sampled on the ensemble's `x_grid`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerPath<T> {
    pub powers: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerEnsemble<T> {
    pub x_grid: Vec<T>,
    pub paths: Vec<PowerPath<T>>,
    pub steps: usize,
    /// Number of negative excursions reset to zero over all paths.
    pub clamp_count: usize,
    /// Largest per-step relative violation of the power balance
    /// `Δ(ΣP) = -Σ Λ_j P_j dx`, before clamping.
    pub max_balance_error: T,
}

/// Ensemble estimates of `E[P_j]` and of the packed second moments
/// `S_jl = (1 + 1_{j≠l}) E[P_j P_l]`, with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleMoments<T> {
    pub mean: Vec<T>,
    pub mean_se: Vec<T>,
    pub second: Vec<T>,
    pub second_se: Vec<T>,
}

impl<T: Real> PowerEnsemble<T> {
    pub fn final_powers(&self) -> Vec<&[T]> {
        self.paths.iter().map(|p| p.powers.last().expect("end point recorded").as_slice()).collect()
    }

    /// Moments across paths at recorded position `k`.
    pub fn moments(&self, k: usize) -> Result<EnsembleMoments<T>> {
        if k >= self.x_grid.len() {
            return Err(Error::IndexOutOfRange { index: k, count: self.x_grid.len() });
        }
        let samples: Vec<&[T]> = self.paths.iter().map(|p| p.powers[k].as_slice()).collect();
        ensemble_moments(&samples)
    }
}

pub fn ensemble_moments<T: Real>(samples: &[&[T]]) -> Result<EnsembleMoments<T>> {
    let m = samples.len();
    if m < 2 {
        return Err(Error::InsufficientData("need at least two paths for standard errors".into()));
    }
    let n = samples[0].len();
    let mf = T::of_usize(m);
    let mut mean = vec![T::zero(); n];
    let mut mean_sq = vec![T::zero(); n];
    let np = packed_len(n);
    let mut second = vec![T::zero(); np];
    let mut second_sq = vec![T::zero(); np];
    for p in samples {
        for j in 0..n {
            mean[j] += p[j];
            mean_sq[j] += p[j] * p[j];
            for l in j..n {
                let f = if j == l { T::one() } else { T::of(2.0) };
                let v = f * p[j] * p[l];
                let k = packed_index(n, j, l);
                second[k] += v;
                second_sq[k] += v * v;
            }
        }
    }
    let se = |sum: T, sum_sq: T| {
        let mu = sum / mf;
        let var = ((sum_sq / mf - mu * mu) * mf / (mf - T::one())).max(T::zero());
        (mu, (var / mf).sqrt())
    };
    let (mean, mean_se): (Vec<T>, Vec<T>) = mean.iter().zip(&mean_sq).map(|(s, q)| se(*s, *q)).unzip();
    let (second, second_se): (Vec<T>, Vec<T>) = second.iter().zip(&second_sq).map(|(s, q)| se(*s, *q)).unzip();
    Ok(EnsembleMoments { mean, mean_se, second, second_se })
}

/// Euler–Maruyama ensemble of the power diffusion. Each coupled pair
/// `(j, l)` exchanges `Γ_jl (P_l - P_j) dx + sqrt(2 Γ_jl P_j P_l dx) ξ_jl`,
/// so coupling alone conserves `ΣP` exactly; dissipation removes
/// `Λ_j P_j dx`. Paths use independent ChaCha streams keyed by path index,
/// so results do not depend on the thread count.
pub fn simulate_powers<T: Real>(c: &CouplingModel<T>, q0: &[T], opts: &SimulationOptions<T>) -> Result<PowerEnsemble<T>> {
    let n = c.len();
    if q0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: q0.len() });
    }
    if q0.iter().any(|v| !(*v >= T::zero() && v.is_finite())) {
        return Err(Error::InvalidParameter("initial powers must be finite and nonnegative".into()));
    }
    if opts.n_paths == 0 {
        return Err(Error::InvalidParameter("at least one path is required".into()));
    }
    if !(opts.dx > T::zero() && opts.x_end >= T::zero() && opts.x_end.is_finite()) {
        return Err(Error::InvalidParameter("range and step must be positive and finite".into()));
    }
    let rate = (0..n).fold(T::zero(), |m, j| m.max(c.gamma[(j, j)].abs() + c.lambda[j]));
    let product = opts.dx * rate;
    if product >= T::of(MAX_STEP_PRODUCT) {
        return Err(Error::StepTooLarge { product: product.to_f64_lossy() });
    }
    let steps = (opts.x_end / opts.dx).ceil().to_usize().unwrap_or(0);
    let dx = if steps > 0 { opts.x_end / T::of_usize(steps) } else { T::zero() };
    let stride = opts.record_every.unwrap_or(steps.max(1)).max(1);
    let recorded: Vec<usize> = (0..=steps).filter(|s| s % stride == 0 || *s == steps).collect();
    let x_grid = recorded.iter().map(|s| dx * T::of_usize(*s)).collect();

    let pairs: Vec<(usize, usize, T)> = (0..n)
        .flat_map(|j| ((j + 1)..n).map(move |l| (j, l)))
        .filter_map(|(j, l)| {
            let g = T::of(0.5) * (c.gamma[(j, l)] + c.gamma[(l, j)]);
            (g > T::zero()).then_some((j, l, g))
        })
        .collect();

    let runs: Vec<(PowerPath<T>, usize, T)> = (0..opts.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(path as u64);
            run_path(&pairs, &c.lambda, q0, dx, steps, &recorded, &mut rng)
        })
        .collect();
    let clamp_count = runs.iter().map(|r| r.1).sum();
    let max_balance_error = runs.iter().fold(T::zero(), |m, r| m.max(r.2));
    let paths = runs.into_iter().map(|r| r.0).collect();
    Ok(PowerEnsemble { x_grid, paths, steps, clamp_count, max_balance_error })
}

fn run_path<T: Real, R: Rng>(
    pairs: &[(usize, usize, T)],
    lambda: &[T],
    q0: &[T],
    dx: T,
    steps: usize,
    recorded: &[usize],
    rng: &mut R,
) -> (PowerPath<T>, usize, T) {
    let n = q0.len();
    let two = T::of(2.0);
    let mut p = q0.to_vec();
    let mut inc = vec![T::zero(); n];
    let mut powers = Vec::with_capacity(recorded.len());
    let mut next_record = 0;
    let mut clamps = 0;
    let mut worst = T::zero();
    for step in 0..=steps {
        if next_record < recorded.len() && recorded[next_record] == step {
            powers.push(p.clone());
            next_record += 1;
        }
        if step == steps {
            break;
        }
        inc.iter_mut().for_each(|v| *v = T::zero());
        for &(j, l, g) in pairs {
            let xi: f64 = rng.sample(StandardNormal);
            let flow = g * (p[l] - p[j]) * dx + (two * g * p[j] * p[l] * dx).sqrt() * T::of(xi);
            inc[j] += flow;
            inc[l] -= flow;
        }
        let before: T = p.iter().copied().sum();
        let mut loss = T::zero();
        for j in 0..n {
            let d = lambda[j] * p[j] * dx;
            loss += d;
            inc[j] -= d;
        }
        let mut after = T::zero();
        for j in 0..n {
            p[j] += inc[j];
            after += p[j];
        }
        if before > T::zero() {
            worst = worst.max((after - (before - loss)).abs() / before);
        }
        for v in p.iter_mut() {
            if *v < T::zero() {
                *v = T::zero();
                clamps += 1;
            }
        }
    }
    (PowerPath { powers }, clamps, worst)
}

/// Mode powers used for snapshot synthesis.
#[derive(Debug, Clone, Copy)]
pub enum PowerSource<'a, T> {
    Fixed(&'a [T]),
    /// One power vector is drawn uniformly per snapshot.
    Ensemble(&'a [&'a [T]]),
}

/// Phase-randomised snapshots `p(z_n) = Σ_j sqrt(P_j) e^{iθ_j} φ_j(z_n) / sqrt(β_j)`
/// at the hydrophones of `geom`, one per repetition.
pub fn synthesize_snapshots<T: Real>(
    modes: &ModeSet<T>,
    powers: PowerSource<'_, T>,
    geom: &ArrayGeometry<T>,
    freq_hz: T,
    n_snapshots: usize,
    seed: u64,
) -> Result<SnapshotSet<T>> {
    modes.require_guided()?;
    let n = modes.len();
    let check = |p: &[T]| -> Result<()> {
        if p.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: p.len() });
        }
        if p.iter().any(|v| !(*v >= T::zero() && v.is_finite())) {
            return Err(Error::InvalidParameter("mode powers must be finite and nonnegative".into()));
        }
        Ok(())
    };
    match powers {
        PowerSource::Fixed(p) => check(p)?,
        PowerSource::Ensemble(e) => {
            if e.is_empty() {
                return Err(Error::InsufficientData("empty power ensemble".into()));
            }
            e.iter().try_for_each(|p| check(p))?;
        }
    }
    let shapes: Vec<Vec<T>> = geom
        .hydrophone_depths
        .iter()
        .map(|&z| (0..n).map(|j| modes.phi_unchecked(j, z) / modes.beta()[j].sqrt()).collect())
        .collect();
    let snapshots = (0..n_snapshots)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64);
            let p = match powers {
                PowerSource::Fixed(p) => p,
                PowerSource::Ensemble(e) => e[rng.random_range(0..e.len())],
            };
            let phases: Vec<Complex<T>> = (0..n)
                .map(|j| {
                    let theta: f64 = rng.random::<f64>() * std::f64::consts::TAU;
                    Complex::from_polar(p[j].sqrt(), T::of(theta))
                })
                .collect();
            let values = shapes
                .iter()
                .map(|s| s.iter().zip(&phases).fold(Complex::new(T::zero(), T::zero()), |acc, (w, a)| acc + *a * *w))
                .collect();
            Snapshot { freq_hz, rep, values }
        })
        .collect();
    SnapshotSet::new(geom.hydrophone_depths.clone(), snapshots)
}
