use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::least_squares::levenberg_marquardt;
use super::nelder_mead::{nelder_mead, SimplexOptions, SimplexOutcome};
use crate::coupling::{alpha_to_nu, nu_to_alpha};
use crate::error::{Error, Result};
use crate::field::{predict_frequency, ArrayGeometry, ForwardOptions};
use crate::modes::{EnvironmentParams, SourceSpec};
use crate::real::Real;

/// Unknowns of the inverse problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    CS,
    RhoS,
    Alpha,
    Sigma,
    EllV,
    EllH,
}

impl Param {
    pub const ALL: [Param; 6] = [Param::CS, Param::RhoS, Param::Alpha, Param::Sigma, Param::EllV, Param::EllH];

    pub fn name(self) -> &'static str {
        match self {
            Param::CS => "c_s",
            Param::RhoS => "rho_s",
            Param::Alpha => "alpha",
            Param::Sigma => "sigma",
            Param::EllV => "ell_v",
            Param::EllH => "ell_h",
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Param::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown parameter `{s}`")))
    }
}

/// Sediment and medium parameters; dissipation is the attenuation in
/// dB per wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeabedParams<T> {
    pub c_s: T,
    pub rho_s: T,
    pub alpha: T,
    pub sigma: T,
    pub ell_v: T,
    pub ell_h: T,
}

impl<T: Real> SeabedParams<T> {
    pub fn get(&self, p: Param) -> T {
        match p {
            Param::CS => self.c_s,
            Param::RhoS => self.rho_s,
            Param::Alpha => self.alpha,
            Param::Sigma => self.sigma,
            Param::EllV => self.ell_v,
            Param::EllH => self.ell_h,
        }
    }

    pub fn set(&mut self, p: Param, v: T) {
        match p {
            Param::CS => self.c_s = v,
            Param::RhoS => self.rho_s = v,
            Param::Alpha => self.alpha = v,
            Param::Sigma => self.sigma = v,
            Param::EllV => self.ell_v = v,
            Param::EllH => self.ell_h = v,
        }
    }

    pub fn with(mut self, p: Param, v: T) -> Self {
        self.set(p, v);
        self
    }

    pub fn environment(&self, known: &KnownParams<T>) -> EnvironmentParams<T> {
        EnvironmentParams {
            c_w: known.c_w,
            c_s: self.c_s,
            rho_w: known.rho_w,
            rho_s: self.rho_s,
            z_b: known.z_b,
            nu_s: alpha_to_nu(self.alpha),
            sigma: self.sigma,
            ell_v: self.ell_v,
            ell_h: self.ell_h,
        }
    }

    pub fn from_environment(env: &EnvironmentParams<T>) -> Self {
        Self {
            c_s: env.c_s,
            rho_s: env.rho_s,
            alpha: nu_to_alpha(env.nu_s),
            sigma: env.sigma,
            ell_v: env.ell_v,
            ell_h: env.ell_h,
        }
    }
}

/// Water properties and depth, taken as known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnownParams<T> {
    pub c_w: T,
    pub rho_w: T,
    pub z_b: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBounds<T> {
    pub lower: SeabedParams<T>,
    pub upper: SeabedParams<T>,
}

impl<T: Real> Default for ParamBounds<T> {
    fn default() -> Self {
        let p = |c: f64, r: f64, a: f64, s: f64, v: f64, h: f64| SeabedParams {
            c_s: T::of(c),
            rho_s: T::of(r),
            alpha: T::of(a),
            sigma: T::of(s),
            ell_v: T::of(v),
            ell_h: T::of(h),
        };
        Self { lower: p(1550.0, 1300.0, 0.05, 1e-4, 5.0, 20.0), upper: p(1800.0, 2200.0, 3.0, 2e-2, 100.0, 500.0) }
    }
}

impl<T: Real> ParamBounds<T> {
    pub fn validate(&self) -> Result<()> {
        for p in Param::ALL {
            let (lo, hi) = (self.lower.get(p), self.upper.get(p));
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidParameter(format!("bounds for {p} must be finite with lower <= upper")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, phi: &SeabedParams<T>) -> bool {
        Param::ALL.iter().all(|p| phi.get(*p) >= self.lower.get(*p) && phi.get(*p) <= self.upper.get(*p))
    }

    fn free(&self) -> Vec<Param> {
        Param::ALL.into_iter().filter(|p| self.upper.get(*p) > self.lower.get(*p)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionOptions {
    /// Number of Latin-hypercube starting points.
    pub starts: usize,
    pub seed: u64,
    pub simplex: SimplexOptions,
    pub polish: PolishOptions,
    pub forward: ForwardOptions,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            starts: 16,
            seed: 0,
            simplex: SimplexOptions::default(),
            polish: PolishOptions::default(),
            forward: ForwardOptions::default(),
        }
    }
}

/// Second phase: the best starts are refined by repeated simplex restarts,
/// which gets a stalled simplex moving again along flat valleys, and then
/// by damped Gauss-Newton steps on the per-frequency residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolishOptions {
    /// Number of best starts to refine.
    pub starts: usize,
    /// Evaluation budget per refined start.
    pub evaluations: usize,
    /// Evaluations per restart.
    pub restart_evaluations: usize,
    /// Initial simplex edge of each restart.
    pub initial_step: f64,
    /// Levenberg-Marquardt iterations on the radius residuals after the
    /// simplex restarts; zero disables the step.
    pub least_squares_iterations: usize,
    /// Central-difference step in the logistic coordinates.
    pub least_squares_step: f64,
}

impl Default for PolishOptions {
    fn default() -> Self {
        Self { starts: 2, evaluations: 2400, restart_evaluations: 300, initial_step: 0.1, least_squares_iterations: 30, least_squares_step: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Real"))]
pub struct InverseProblem<T> {
    pub known: KnownParams<T>,
    pub source: SourceSpec<T>,
    pub geometry: ArrayGeometry<T>,
    pub frequencies: Vec<T>,
    pub observed: Vec<T>,
    #[serde(default)]
    pub bounds: ParamBounds<T>,
    #[serde(default)]
    pub options: InversionOptions,
}

impl<T: Real> InverseProblem<T> {
    pub fn validate(&self) -> Result<()> {
        if self.frequencies.len() != self.observed.len() {
            return Err(Error::DimensionMismatch { expected: self.frequencies.len(), got: self.observed.len() });
        }
        if self.frequencies.is_empty() {
            return Err(Error::InsufficientData("no frequencies".into()));
        }
        if self.observed.iter().any(|r| !(*r > T::zero() && r.is_finite())) {
            return Err(Error::InvalidParameter("observed radii must be positive".into()));
        }
        if self.frequencies.iter().any(|f| !(*f > T::zero())) {
            return Err(Error::InvalidParameter("frequencies must be positive".into()));
        }
        self.bounds.validate()?;
        self.source.validate(self.known.z_b)?;
        self.geometry.validate(self.known.z_b)
    }

    /// Theoretical radius at each frequency, `None` where the forward
    /// model fails.
    pub fn predict(&self, phi: &SeabedParams<T>) -> Result<Vec<Option<T>>> {
        let env = phi.environment(&self.known);
        env.validate()?;
        Ok(self
            .frequencies
            .par_iter()
            .map(|f| predict_frequency(&env, &self.source, &self.geometry, *f, &self.options.forward).ok().map(|p| p.radius))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MisfitEvaluation<T> {
    pub value: T,
    pub predicted: Vec<Option<T>>,
    /// Frequencies left out because the forward model failed there.
    pub excluded: Vec<usize>,
}

/// `Σ_k (r_t(f_k) - r_e(f_k))²` over frequencies where the forward model
/// succeeds.
pub fn misfit<T: Real>(problem: &InverseProblem<T>, phi: &SeabedParams<T>) -> Result<MisfitEvaluation<T>> {
    let predicted = problem.predict(phi)?;
    let mut value = T::zero();
    let mut excluded = Vec::new();
    for (k, (p, o)) in predicted.iter().zip(&problem.observed).enumerate() {
        match p {
            Some(r) => value += (*r - *o) * (*r - *o),
            None => excluded.push(k),
        }
    }
    if excluded.len() == predicted.len() {
        return Err(Error::ForwardModelFailure);
    }
    Ok(MisfitEvaluation { value, predicted, excluded })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry<T> {
    pub start: usize,
    pub evaluation: usize,
    pub phi: SeabedParams<T>,
    pub misfit: T,
    pub best_so_far: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartSummary<T> {
    pub start: usize,
    pub initial: SeabedParams<T>,
    pub phi: SeabedParams<T>,
    pub misfit: T,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InversionResult<T> {
    pub phi_hat: SeabedParams<T>,
    pub misfit: T,
    pub starts: Vec<StartSummary<T>>,
    pub trace: Vec<TraceEntry<T>>,
    /// The best start ran out of evaluations before converging.
    pub budget_exhausted: bool,
}

/// Logistic map of the free coordinates onto the box.
struct BoxMap<T> {
    base: SeabedParams<T>,
    bounds: ParamBounds<T>,
    free: Vec<Param>,
}

impl<T: Real> BoxMap<T> {
    fn to_params(&self, u: &[T]) -> SeabedParams<T> {
        let mut phi = self.base;
        for (p, v) in self.free.iter().zip(u) {
            let (lo, hi) = (self.bounds.lower.get(*p), self.bounds.upper.get(*p));
            let s = T::one() / (T::one() + (-*v).exp());
            phi.set(*p, (lo + (hi - lo) * s).max(lo).min(hi));
        }
        phi
    }

    fn unit_to_coords(&self, unit: &[T]) -> Vec<T> {
        unit.iter().map(|p| (*p / (T::one() - *p)).ln()).collect()
    }
}

/// Evaluated points of one start, in order.
type History<T> = Vec<(SeabedParams<T>, T)>;

/// Latin-hypercube samples in the open unit cube.
fn latin_hypercube<T: Real>(dims: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let mut out = vec![vec![T::zero(); dims]; count];
    for d in 0..dims {
        let mut strata: Vec<usize> = (0..count).collect();
        strata.shuffle(rng);
        for (i, s) in strata.into_iter().enumerate() {
            let jitter: f64 = rng.random_range(0.05..0.95);
            out[i][d] = T::of((s as f64 + jitter) / count as f64);
        }
    }
    out
}

/// Multistart bounded simplex search. Starts run in parallel; the trace is
/// merged in start order so results are reproducible for a given seed.
pub fn minimize<T: Real>(problem: &InverseProblem<T>) -> Result<InversionResult<T>> {
    problem.validate()?;
    let opts = &problem.options;
    let bounds = problem.bounds;
    let free = bounds.free();
    let mut base = bounds.lower;
    for p in Param::ALL {
        base.set(p, T::of(0.5) * (bounds.lower.get(p) + bounds.upper.get(p)));
    }
    let map = BoxMap { base, bounds, free };
    let starts = opts.starts.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let samples: Vec<Vec<T>> = latin_hypercube(map.free.len(), starts, &mut rng);
    let objective = |u: &[T]| misfit(problem, &map.to_params(u)).map(|m| m.value).unwrap_or(T::infinity());
    let residuals = |u: &[T]| -> Option<Vec<T>> {
        let predicted = problem.predict(&map.to_params(u)).ok()?;
        predicted.iter().zip(&problem.observed).map(|(p, o)| p.map(|r| r - *o)).collect()
    };

    let runs: Vec<(StartSummary<T>, History<T>, Vec<T>)> = samples
        .par_iter()
        .enumerate()
        .map(|(start, unit)| {
            let u0 = map.unit_to_coords(unit);
            let mut history = Vec::new();
            let mut record = |u: &[T], v: T| history.push((map.to_params(u), v));
            let first = nelder_mead(objective, &u0, &opts.simplex, &mut record);
            let mut best = first.clone();
            let mut used = first.evaluations;
            // one restart from the optimum guards against a collapsed simplex
            if first.converged && used < opts.simplex.max_evaluations {
                let rest = SimplexOptions { max_evaluations: opts.simplex.max_evaluations - used, ..opts.simplex };
                let second = nelder_mead(objective, &first.x, &rest, &mut record);
                used += second.evaluations;
                if second.value <= best.value {
                    best = second;
                } else {
                    best.converged = second.converged;
                }
            }
            let summary = StartSummary {
                start,
                initial: map.to_params(&u0),
                phi: map.to_params(&best.x),
                misfit: best.value,
                evaluations: used,
                converged: best.converged,
            };
            (summary, history, best.x)
        })
        .collect();

    let mut trace = Vec::new();
    let mut best_so_far = T::infinity();
    let mut summaries = Vec::with_capacity(runs.len());
    let mut unit_optima = Vec::with_capacity(runs.len());
    for (summary, history, x) in runs {
        for (evaluation, (phi, v)) in history.into_iter().enumerate() {
            best_so_far = best_so_far.min(v);
            trace.push(TraceEntry { start: summary.start, evaluation, phi, misfit: v, best_so_far });
        }
        summaries.push(summary);
        unit_optima.push(x);
    }

    let mut ranked: Vec<usize> = (0..summaries.len()).filter(|&i| summaries[i].misfit.is_finite()).collect();
    ranked.sort_by(|a, b| summaries[*a].misfit.partial_cmp(&summaries[*b].misfit).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(b)));
    ranked.truncate(opts.polish.starts);
    let polished: Vec<(usize, SimplexOutcome<T>, bool, History<T>)> = ranked
        .par_iter()
        .map(|&i| {
            let mut history = Vec::new();
            let mut record = |u: &[T], v: T| history.push((map.to_params(u), v));
            let (mut best, mut converged) = polish(objective, &unit_optima[i], summaries[i].misfit, &opts.polish, opts.simplex, &mut record);
            if opts.polish.least_squares_iterations > 0 && best.value > T::zero() {
                let step = T::of(opts.polish.least_squares_step);
                let refined = levenberg_marquardt(residuals, &best.x, opts.polish.least_squares_iterations, step, &mut record);
                best.evaluations += refined.evaluations;
                if refined.value < best.value {
                    best.x = refined.x;
                    best.value = refined.value;
                    converged = refined.converged;
                }
            }
            (i, best, converged, history)
        })
        .collect();
    for (i, best, converged, history) in polished {
        let offset = summaries[i].evaluations;
        for (k, (phi, v)) in history.into_iter().enumerate() {
            best_so_far = best_so_far.min(v);
            trace.push(TraceEntry { start: i, evaluation: offset + k, phi, misfit: v, best_so_far });
        }
        let s = &mut summaries[i];
        s.evaluations += best.evaluations;
        if best.value < s.misfit {
            s.phi = map.to_params(&best.x);
            s.misfit = best.value;
        }
        s.converged = converged;
    }
    let best = summaries
        .iter()
        .min_by(|a, b| a.misfit.partial_cmp(&b.misfit).unwrap_or(std::cmp::Ordering::Equal).then(a.start.cmp(&b.start)))
        .expect("at least one start");
    if !best.misfit.is_finite() {
        return Err(Error::ForwardModelFailure);
    }
    Ok(InversionResult {
        phi_hat: best.phi,
        misfit: best.misfit,
        budget_exhausted: !best.converged,
        starts: summaries.clone(),
        trace,
    })
}

/// Repeated simplex restarts from `x0` until the budget is spent or a
/// restart converges without improving. Returns the best point (with the
/// evaluations used) and whether the search converged.
fn polish<T: Real, F, O>(
    objective: F,
    x0: &[T],
    f0: T,
    opts: &PolishOptions,
    simplex: SimplexOptions,
    mut observe: O,
) -> (SimplexOutcome<T>, bool)
where
    F: Fn(&[T]) -> T,
    O: FnMut(&[T], T),
{
    let mut best = SimplexOutcome { x: x0.to_vec(), value: f0, evaluations: 0, converged: false };
    let mut used = 0;
    let mut converged = false;
    while used < opts.evaluations {
        let budget = opts.restart_evaluations.max(2 * x0.len() + 2).min(opts.evaluations - used);
        let run_opts = SimplexOptions { max_evaluations: budget, initial_step: opts.initial_step, ..simplex };
        let run = nelder_mead(&objective, &best.x, &run_opts, &mut observe);
        used += run.evaluations;
        let improved = run.value < best.value;
        if improved {
            best.x = run.x;
            best.value = run.value;
        }
        if run.converged && !improved {
            converged = true;
            break;
        }
    }
    best.evaluations = used;
    (best, converged)
}

/// Radius curves when one parameter is swept with the others held at `phi0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityCurve<T> {
    pub param: Param,
    pub frequencies: Vec<T>,
    pub values: Vec<T>,
    /// `radii[i][k]`: radius for `values[i]` at `frequencies[k]`.
    pub radii: Vec<Vec<Option<T>>>,
}

pub fn sensitivity<T: Real>(
    problem: &InverseProblem<T>,
    phi0: &SeabedParams<T>,
    param: Param,
    values: &[T],
) -> Result<SensitivityCurve<T>> {
    let radii = values
        .iter()
        .map(|v| match problem.predict(&phi0.with(param, *v)) {
            Ok(r) => r,
            Err(_) => vec![None; problem.frequencies.len()],
        })
        .collect();
    Ok(SensitivityCurve { param, frequencies: problem.frequencies.clone(), values: values.to_vec(), radii })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSensitivity<T> {
    pub param: Param,
    /// `‖∂r/∂ log θ‖₂` over frequencies (m).
    pub norm: T,
    pub per_frequency: Vec<T>,
}

/// Central-difference radius sensitivities to `log θ`, most influential
/// first.
pub fn sensitivity_ranking<T: Real>(
    problem: &InverseProblem<T>,
    phi0: &SeabedParams<T>,
    log_step: T,
) -> Result<Vec<ParamSensitivity<T>>> {
    if !(log_step > T::zero()) {
        return Err(Error::InvalidParameter("log step must be positive".into()));
    }
    let mut out = Vec::with_capacity(Param::ALL.len());
    for p in Param::ALL {
        let v = phi0.get(p);
        let up = problem.predict(&phi0.with(p, v * log_step.exp()))?;
        let down = problem.predict(&phi0.with(p, v * (-log_step).exp()))?;
        let per_frequency: Vec<T> = up
            .iter()
            .zip(&down)
            .map(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => (*a - *b) / (T::of(2.0) * log_step),
                _ => T::zero(),
            })
            .collect();
        let norm = per_frequency.iter().map(|d| *d * *d).sum::<T>().sqrt();
        out.push(ParamSensitivity { param: p, norm, per_frequency });
    }
    out.sort_by(|a, b| b.norm.partial_cmp(&a.norm).unwrap_or(std::cmp::Ordering::Equal));
    Ok(out)
}
