//! Vertical-array correlation functions, correlation radii, and the
//! per-frequency forward model used by the inversion.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{gamma_coupling, radiative_damping, sediment_damping, CouplingModel};
use crate::error::{Error, Result};
use crate::modes::{solve_modes, source_amplitudes, EnvironmentParams, ModeSet, SourceSpec};
use crate::moments::propagate_q;
use crate::numerics::roots::bisect_bracket;
use crate::real::Real;

pub const DEFAULT_LAG_POINTS: usize = 512;
/// Bracket width at which bisection of the half crossing stops; a final
/// secant step inside the bracket keeps the radius smooth in the model
/// parameters.
const RADIUS_TOL: f64 = 1e-7;

/// Vertical receiving array at range `x_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayGeometry<T> {
    pub x_a: T,
    pub z_m: T,
    pub z_max: T,
    pub hydrophone_depths: Vec<T>,
    /// Nominal spacing between neighbouring hydrophones (m).
    pub spacing: T,
}

impl<T: Real> ArrayGeometry<T> {
    /// `count` hydrophones `spacing` apart, centred on `centre`.
    pub fn uniform(x_a: T, centre: T, count: usize, spacing: T) -> Result<Self> {
        if count < 2 {
            return Err(Error::InvalidParameter("an array needs at least two hydrophones".into()));
        }
        let half = spacing * T::of_usize(count - 1) * T::of(0.5);
        let z_m = centre - half;
        let depths: Vec<T> = (0..count).map(|n| z_m + spacing * T::of_usize(n)).collect();
        let z_max = *depths.last().expect("count >= 2");
        Ok(Self { x_a, z_m, z_max, hydrophone_depths: depths, spacing })
    }

    pub fn aperture(&self) -> T {
        self.z_max - self.z_m
    }

    pub fn validate(&self, z_b: T) -> Result<()> {
        if !(self.x_a > T::zero()) {
            return Err(Error::InvalidParameter("array range must be positive".into()));
        }
        if !(self.z_m > T::zero() && self.z_m < self.z_max && self.z_max < z_b) {
            return Err(Error::InvalidParameter("array aperture must satisfy 0 < z_m < z_M < z_b".into()));
        }
        if !(self.spacing > T::zero()) {
            return Err(Error::InvalidParameter("hydrophone spacing must be positive".into()));
        }
        let slack = self.spacing * T::of(1e-6);
        let sorted = self.hydrophone_depths.windows(2).all(|w| w[0] < w[1]);
        let inside = self.hydrophone_depths.iter().all(|z| *z >= self.z_m - slack && *z <= self.z_max + slack);
        if !sorted || !inside {
            return Err(Error::InvalidParameter("hydrophone depths must be sorted and inside the aperture".into()));
        }
        Ok(())
    }
}

/// Normalised correlation curve with its half-maximum radius.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationCurve<T> {
    pub y: Vec<T>,
    pub values: Vec<T>,
    pub radius: T,
    /// False when the curve never drops to 1/2; `radius` is then the
    /// aperture length.
    pub reached: bool,
    /// Un-normalised value at zero lag.
    pub zero_lag: T,
}

/// Un-normalised aperture-averaged correlation at lag `y` for mean powers
/// `q`, with cross-mode terms neglected.
pub fn correlation_value<T: Real>(modes: &ModeSet<T>, q: &[T], geom: &ArrayGeometry<T>, y: T) -> Result<T> {
    if q.len() != modes.len() {
        return Err(Error::DimensionMismatch { expected: modes.len(), got: q.len() });
    }
    let aperture = geom.aperture();
    let span = aperture - y;
    if !(span > T::zero()) || y < T::zero() {
        return Err(Error::EmptyAperture { lag: y.to_f64_lossy(), aperture: aperture.to_f64_lossy() });
    }
    let two = T::of(2.0);
    let mut acc = T::zero();
    for j in 0..modes.len() {
        let k = modes.k_wj()[j];
        let a2 = modes.amplitude()[j] * modes.amplitude()[j];
        let bracket = (k * y).cos() * span - ((k * (two * geom.z_max - y)).sin() - (k * (two * geom.z_m + y)).sin()) / (two * k);
        acc += q[j] / modes.beta()[j] * a2 / two * bracket;
    }
    Ok(acc / span)
}

pub fn default_lag_grid<T: Real>(aperture: T, points: usize) -> Vec<T> {
    let step = aperture / T::of_usize(points.max(1));
    (0..points.max(1)).map(|k| step * T::of_usize(k)).collect()
}

/// Correlation curve on `y_grid` (default: 512 lags over `[0, z_M - z_m)`),
/// normalised by its zero-lag value, with the radius refined on the
/// analytic expression.
pub fn correlation_curve<T: Real>(
    modes: &ModeSet<T>,
    q: &[T],
    geom: &ArrayGeometry<T>,
    y_grid: Option<&[T]>,
) -> Result<CorrelationCurve<T>> {
    modes.require_guided()?;
    let default;
    let grid = match y_grid {
        Some(g) => g,
        None => {
            default = default_lag_grid(geom.aperture(), DEFAULT_LAG_POINTS);
            &default
        }
    };
    let zero = correlation_value(modes, q, geom, T::zero())?;
    if !(zero > T::zero()) {
        return Err(Error::InvalidParameter("zero-lag correlation vanishes".into()));
    }
    let mut values = Vec::with_capacity(grid.len());
    for &y in grid {
        values.push(correlation_value(modes, q, geom, y)? / zero);
    }
    let eval = |y: T| correlation_value(modes, q, geom, y).map(|v| v / zero).unwrap_or(T::zero());
    let (radius, reached) = first_half_crossing(grid, &values, geom.aperture(), |lo, hi| {
        let f = |y: T| eval(y) - T::of(0.5);
        let (a, b) = bisect_bracket(f, lo, hi, T::of(RADIUS_TOL));
        let (fa, fb) = (f(a), f(b));
        if fa == fb {
            T::of(0.5) * (a + b)
        } else {
            (a - fa * (b - a) / (fb - fa)).max(a).min(b)
        }
    });
    Ok(CorrelationCurve { y: grid.to_vec(), values, radius, reached, zero_lag: zero })
}

/// Finds the first downward crossing of 1/2 on a sampled curve and refines
/// it with `refine(lo, hi)`. Returns `(fallback, false)` if none.
pub fn first_half_crossing<T: Real, R>(y: &[T], values: &[T], fallback: T, refine: R) -> (T, bool)
where
    R: FnOnce(T, T) -> T,
{
    let half = T::of(0.5);
    for i in 1..values.len().min(y.len()) {
        if values[i - 1] > half && values[i] <= half {
            return (refine(y[i - 1], y[i]), true);
        }
    }
    (fallback, false)
}

/// Radius of a sampled curve by linear interpolation between the samples
/// that bracket the first downward 1/2-crossing.
pub fn radius_by_interpolation<T: Real>(y: &[T], values: &[T], fallback: T) -> (T, bool) {
    let half = T::of(0.5);
    let find = |lo: T, hi: T| {
        let i = y.iter().position(|v| *v == hi).expect("bracket taken from the grid");
        let (v0, v1) = (values[i - 1], values[i]);
        if v0 == v1 {
            hi
        } else {
            lo + (hi - lo) * (v0 - half) / (v0 - v1)
        }
    };
    first_half_crossing(y, values, fallback, find)
}

/// Theoretical counterpart of the discrete array estimator: the average of
/// `E[conj(p(z_n)) p(z_m)]` over hydrophone pairs at each multiple of the
/// spacing, normalised by the zero-lag average.
pub fn array_correlation_curve<T: Real>(modes: &ModeSet<T>, q: &[T], geom: &ArrayGeometry<T>) -> Result<CorrelationCurve<T>> {
    modes.require_guided()?;
    if q.len() != modes.len() {
        return Err(Error::DimensionMismatch { expected: modes.len(), got: q.len() });
    }
    let depths = &geom.hydrophone_depths;
    let nh = depths.len();
    if nh < 2 {
        return Err(Error::InsufficientData("fewer than two hydrophones".into()));
    }
    // weighted mode shapes g_j(z) = sqrt(Q_j / β_j) φ_j(z)
    let shapes: Vec<Vec<T>> = depths
        .iter()
        .map(|&z| (0..modes.len()).map(|j| (q[j] / modes.beta()[j]).sqrt() * modes.phi_unchecked(j, z)).collect())
        .collect();
    let dot = |a: &[T], b: &[T]| a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y);
    let bins = lag_bins(depths, geom.spacing);
    let mut sums = vec![T::zero(); bins.max_bin + 1];
    let mut counts = vec![0usize; bins.max_bin + 1];
    for n in 0..nh {
        for m in n..nh {
            let b = bins.bin(n, m);
            sums[b] += dot(&shapes[n], &shapes[m]);
            counts[b] += 1;
        }
    }
    let y: Vec<T> = (0..sums.len()).map(|b| geom.spacing * T::of_usize(b)).collect();
    let means: Vec<T> = sums.iter().zip(&counts).map(|(s, c)| if *c > 0 { *s / T::of_usize(*c) } else { T::nan() }).collect();
    let zero = means[0];
    let values: Vec<T> = means.iter().map(|v| *v / zero).collect();
    let (radius, reached) = radius_by_interpolation(&y, &values, geom.aperture());
    Ok(CorrelationCurve { y, values, radius, reached, zero_lag: zero })
}

/// Assignment of hydrophone pairs to lag bins of width `spacing`.
pub struct LagBins<'a, T> {
    depths: &'a [T],
    spacing: T,
    pub max_bin: usize,
}

impl<T: Real> LagBins<'_, T> {
    pub fn bin(&self, n: usize, m: usize) -> usize {
        ((self.depths[m] - self.depths[n]).abs() / self.spacing).round().to_usize().unwrap_or(0)
    }
}

pub fn lag_bins<T: Real>(depths: &[T], spacing: T) -> LagBins<'_, T> {
    let span = match (depths.first(), depths.last()) {
        (Some(a), Some(b)) => (*b - *a).abs(),
        _ => T::zero(),
    };
    let max_bin = (span / spacing).round().to_usize().unwrap_or(0);
    LagBins { depths, spacing, max_bin }
}

/// Settings of the per-frequency forward model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardOptions {
    /// Keep at most `n_max` modes, chosen by `selection`.
    pub n_max: Option<usize>,
    pub selection: ModeSelection,
    /// Include the radiative leakage term of Λ.
    pub include_radiative: bool,
    pub lag_points: usize,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self { n_max: None, selection: ModeSelection::default(), include_radiative: true, lag_points: DEFAULT_LAG_POINTS }
    }
}

/// Which modes survive truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSelection {
    /// The modes with the largest initial power.
    #[default]
    InitialPower,
    /// The lowest-order modes. The kept set then varies continuously with
    /// the environment, which keeps the inversion misfit free of jumps.
    LowestOrder,
}

/// Forward prediction at one frequency.
#[derive(Debug, Clone, Serialize)]
pub struct FrequencyPrediction<T> {
    pub freq_hz: T,
    pub n_modes: usize,
    pub radius: T,
    pub reached: bool,
    pub curve: CorrelationCurve<T>,
    pub q_xa: Vec<T>,
}

/// Modes (optionally truncated), initial powers and coupling at one
/// frequency.
pub struct FrequencySetup<T> {
    pub modes: ModeSet<T>,
    pub q0: Vec<T>,
    pub coupling: CouplingModel<T>,
}

pub fn frequency_setup<T: Real>(
    env: &EnvironmentParams<T>,
    src: &SourceSpec<T>,
    freq_hz: T,
    opts: &ForwardOptions,
) -> Result<FrequencySetup<T>> {
    let omega = T::of(2.0) * T::PI() * freq_hz;
    let full = solve_modes(env, omega)?;
    full.require_guided()?;
    let q_full = source_amplitudes(&full, src)?;
    let (modes, q0) = match opts.n_max {
        Some(cap) if cap > 0 && cap < full.len() => {
            let mut order: Vec<usize> = (0..full.len()).collect();
            if opts.selection == ModeSelection::InitialPower {
                order.sort_by(|a, b| q_full[*b].partial_cmp(&q_full[*a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(b)));
            }
            order.truncate(cap);
            let sub = full.select(&order)?;
            let mut kept = order.clone();
            kept.sort_unstable();
            let q = kept.iter().map(|&j| q_full[j]).collect();
            (sub, q)
        }
        _ => (full, q_full),
    };
    let gamma = gamma_coupling(&modes)?;
    let sed = sediment_damping(&modes);
    let rad = if opts.include_radiative { radiative_damping(&modes)? } else { vec![T::zero(); modes.len()] };
    let coupling = CouplingModel::from_parts(gamma, rad, sed);
    Ok(FrequencySetup { modes, q0, coupling })
}

pub fn predict_frequency<T: Real>(
    env: &EnvironmentParams<T>,
    src: &SourceSpec<T>,
    geom: &ArrayGeometry<T>,
    freq_hz: T,
    opts: &ForwardOptions,
) -> Result<FrequencyPrediction<T>> {
    let setup = frequency_setup(env, src, freq_hz, opts)?;
    let q_xa = propagate_q(&setup.coupling, &setup.q0, geom.x_a)?;
    let grid = default_lag_grid(geom.aperture(), opts.lag_points);
    let curve = correlation_curve(&setup.modes, &q_xa, geom, Some(&grid))?;
    Ok(FrequencyPrediction {
        freq_hz,
        n_modes: setup.modes.len(),
        radius: curve.radius,
        reached: curve.reached,
        curve,
        q_xa,
    })
}

/// Runs the forward model at each frequency. Frequencies without guided
/// modes are dropped with a warning; other failures are returned.
pub fn forward_radii<T: Real>(
    env: &EnvironmentParams<T>,
    src: &SourceSpec<T>,
    geom: &ArrayGeometry<T>,
    freqs: &[T],
    opts: &ForwardOptions,
) -> Result<Vec<FrequencyPrediction<T>>> {
    env.validate()?;
    src.validate(env.z_b)?;
    geom.validate(env.z_b)?;
    let results: Vec<Result<FrequencyPrediction<T>>> =
        freqs.par_iter().map(|&f| predict_frequency(env, src, geom, f, opts)).collect();
    let mut out = Vec::with_capacity(freqs.len());
    for (f, r) in freqs.iter().zip(results) {
        match r {
            Ok(p) => out.push(p),
            Err(Error::NoGuidedModes { .. }) => warn!("no guided modes at {f} Hz; frequency dropped"),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
