use serde::{Deserialize, Serialize};

use super::snapshots::{Snapshot, SnapshotSet};
use crate::error::{Error, Result};
use crate::field::{radius_by_interpolation, CorrelationCurve};
use crate::real::Real;

const SCINTILLATION_BATCHES: usize = 20;

/// How repetitions are combined in the correlation estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepetitionAveraging {
    /// Average numerators and the zero-lag denominator separately.
    #[default]
    Pooled,
    /// Normalise each repetition, then average the normalised curves.
    PerRepetition,
}

/// How the vertical arms of the array are used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmPooling {
    /// Every arm is an independent realisation; cross-arm pairs are skipped.
    #[default]
    Independent,
    /// Use a single arm only.
    Single(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmpiricalOptions {
    pub averaging: RepetitionAveraging,
    pub arms: ArmPooling,
    /// Lag bin width (m); the smallest within-arm hydrophone separation
    /// when absent.
    pub spacing: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalCurve<T> {
    pub curve: CorrelationCurve<T>,
    pub std_error: Vec<T>,
    pub pair_counts: Vec<usize>,
    pub repetitions: usize,
    pub radius_std_error: T,
    /// Raised when too few repetitions exist for a variance estimate.
    pub variance_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalScintillation<T> {
    pub value: T,
    pub std_error: T,
    pub repetitions: usize,
    pub variance_flag: bool,
}

fn matches_freq<T: Real>(s: &Snapshot<T>, freq: T) -> bool {
    (s.freq_hz - freq).abs() <= T::of(1e-9) * freq.abs().max(T::one())
}

fn selected<T: Real>(set: &SnapshotSet<T>, freq: T) -> Result<Vec<&Snapshot<T>>> {
    let snaps: Vec<&Snapshot<T>> = set.snapshots.iter().filter(|s| matches_freq(s, freq)).collect();
    if snaps.is_empty() {
        return Err(Error::InsufficientData(format!("no snapshots at {freq} Hz")));
    }
    Ok(snaps)
}

fn arm_used(arms: ArmPooling, arm: usize) -> bool {
    match arms {
        ArmPooling::Independent => true,
        ArmPooling::Single(a) => a == arm,
    }
}

fn infer_spacing<T: Real>(set: &SnapshotSet<T>, arms: ArmPooling) -> Result<T> {
    let nh = set.hydrophone_depths.len();
    let mut best = T::infinity();
    for n in 0..nh {
        for m in (n + 1)..nh {
            if set.arms[n] == set.arms[m] && arm_used(arms, set.arms[n]) {
                let d = (set.hydrophone_depths[m] - set.hydrophone_depths[n]).abs();
                if d > T::zero() {
                    best = best.min(d);
                }
            }
        }
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::InsufficientData("fewer than two hydrophones on an arm".into()))
    }
}

/// Vertical correlation estimated from `Re(conj(p_n) p_m)` averaged over
/// same-arm hydrophone pairs in each lag bin and over repetitions,
/// normalised by the zero-lag bin.
pub fn empirical_correlation<T: Real>(set: &SnapshotSet<T>, freq: T, opts: &EmpiricalOptions) -> Result<EmpiricalCurve<T>> {
    let snaps = selected(set, freq)?;
    let spacing = match opts.spacing {
        Some(s) if s > 0.0 => T::of(s),
        Some(_) => return Err(Error::InvalidParameter("lag bin width must be positive".into())),
        None => infer_spacing(set, opts.arms)?,
    };
    let depths = &set.hydrophone_depths;
    let nh = depths.len();
    let mut pairs = Vec::new();
    let mut max_bin = 0;
    for n in 0..nh {
        for m in n..nh {
            if set.arms[n] == set.arms[m] && arm_used(opts.arms, set.arms[n]) {
                let b = ((depths[m] - depths[n]).abs() / spacing).round().to_usize().unwrap_or(0);
                max_bin = max_bin.max(b);
                pairs.push((n, m, b));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no hydrophone on the selected arm".into()));
    }
    let bins = max_bin + 1;
    let mut counts = vec![0usize; bins];
    for &(_, _, b) in &pairs {
        counts[b] += 1;
    }
    // per-repetition bin averages
    let per_rep: Vec<Vec<T>> = snaps
        .iter()
        .map(|s| {
            let mut x = vec![T::zero(); bins];
            for &(n, m, b) in &pairs {
                x[b] += (s.values[n].conj() * s.values[m]).re;
            }
            x.iter().zip(&counts).map(|(v, c)| if *c > 0 { *v / T::of_usize(*c) } else { T::nan() }).collect()
        })
        .collect();
    let reps = per_rep.len();
    let rf = T::of_usize(reps);
    let mean = |f: &dyn Fn(&Vec<T>) -> T| per_rep.iter().map(f).fold(T::zero(), |a, v| a + v) / rf;
    let sd_err = |vals: Vec<T>| -> T {
        if reps < 2 {
            return T::infinity();
        }
        let mu = vals.iter().copied().sum::<T>() / rf;
        let var = vals.iter().map(|v| (*v - mu) * (*v - mu)).sum::<T>() / (rf - T::one());
        (var / rf).sqrt()
    };
    let zero_mean = mean(&|x| x[0]);
    if !(zero_mean > T::zero()) {
        return Err(Error::InsufficientData("zero-lag power vanishes".into()));
    }
    let mut values = Vec::with_capacity(bins);
    let mut std_error = Vec::with_capacity(bins);
    for b in 0..bins {
        match opts.averaging {
            RepetitionAveraging::Pooled => {
                let c = mean(&|x| x[b]) / zero_mean;
                values.push(c);
                std_error.push(sd_err(per_rep.iter().map(|x| (x[b] - c * x[0]) / zero_mean).collect()));
            }
            RepetitionAveraging::PerRepetition => {
                let ratios: Vec<T> = per_rep.iter().map(|x| x[b] / x[0]).collect();
                values.push(ratios.iter().copied().sum::<T>() / rf);
                std_error.push(sd_err(ratios));
            }
        }
    }
    let y: Vec<T> = (0..bins).map(|b| spacing * T::of_usize(b)).collect();
    let fallback = spacing * T::of_usize(max_bin);
    let (radius, reached) = radius_by_interpolation(&y, &values, fallback);
    let radius_std_error = crossing_std_error(&y, &values, &std_error, radius, reached);
    let curve = CorrelationCurve { y, values, radius, reached, zero_lag: zero_mean };
    Ok(EmpiricalCurve { curve, std_error, pair_counts: counts, repetitions: reps, radius_std_error, variance_flag: reps < 2 })
}

/// Standard error of the crossing location from the curve's pointwise
/// errors divided by the local slope.
fn crossing_std_error<T: Real>(y: &[T], v: &[T], se: &[T], r: T, reached: bool) -> T {
    if !reached {
        return T::infinity();
    }
    for i in 1..y.len() {
        if r >= y[i - 1] && r <= y[i] {
            let dy = y[i] - y[i - 1];
            let slope = (v[i] - v[i - 1]) / dy;
            let t = (r - y[i - 1]) / dy;
            let e = se[i - 1] * (T::one() - t) + se[i] * t;
            return if slope != T::zero() { e / slope.abs() } else { T::infinity() };
        }
    }
    T::infinity()
}

/// Radius of an empirical curve by the shared first-crossing rule.
pub fn empirical_radius<T: Real>(curve: &EmpiricalCurve<T>) -> (T, bool) {
    (curve.curve.radius, curve.curve.reached)
}

/// Mean over hydrophones of `(⟨I²⟩ - ⟨I⟩²) / ⟨I⟩²` with `I = |p|²`
/// averaged over repetitions. The standard error comes from batch means.
pub fn empirical_scintillation<T: Real>(set: &SnapshotSet<T>, freq: T, arms: ArmPooling) -> Result<EmpiricalScintillation<T>> {
    let snaps = selected(set, freq)?;
    let hydros: Vec<usize> = (0..set.hydrophone_depths.len()).filter(|&n| arm_used(arms, set.arms[n])).collect();
    if hydros.is_empty() {
        return Err(Error::InsufficientData("no hydrophone on the selected arm".into()));
    }
    let index = |batch: &[&Snapshot<T>]| -> Option<T> {
        let k = T::of_usize(batch.len());
        let mut acc = T::zero();
        let mut used = 0;
        for &n in &hydros {
            let (s1, s2) = batch.iter().fold((T::zero(), T::zero()), |(a, b), s| {
                let i = s.values[n].norm_sqr();
                (a + i, b + i * i)
            });
            let m1 = s1 / k;
            if m1 > T::zero() {
                acc += (s2 / k - m1 * m1) / (m1 * m1);
                used += 1;
            }
        }
        (used > 0).then(|| acc / T::of_usize(used))
    };
    let value = index(&snaps).ok_or_else(|| Error::InsufficientData("all intensities vanish".into()))?;
    let reps = snaps.len();
    let batches = SCINTILLATION_BATCHES.min(reps / 2);
    let std_error = if batches >= 2 {
        let size = reps / batches;
        let est: Vec<T> = (0..batches).filter_map(|b| index(&snaps[b * size..(b + 1) * size])).collect();
        let bf = T::of_usize(est.len());
        let mu = est.iter().copied().sum::<T>() / bf;
        let var = est.iter().map(|v| (*v - mu) * (*v - mu)).sum::<T>() / (bf - T::one());
        (var / bf).sqrt()
    } else {
        T::infinity()
    };
    Ok(EmpiricalScintillation { value, std_error, repetitions: reps, variance_flag: batches < 2 })
}
