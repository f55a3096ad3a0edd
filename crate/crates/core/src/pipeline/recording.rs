use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::warn;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::snapshots::{Snapshot, SnapshotSet};
use crate::error::{Error, Result};

pub const RECORDING_FORMAT_VERSION: u32 = 1;
const FRAME_SECONDS: f64 = 0.1;
const HOP_SECONDS: f64 = 0.05;
const THRESHOLD_DB: f64 = 6.0;
const MIN_DWELL_SECONDS: f64 = 0.5;
const CLIP_RUN: usize = 3;

/// Sidecar metadata of a multichannel recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingMeta {
    pub format_version: u32,
    pub sample_rate: f64,
    pub hydrophone_depths: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub repetition_period: f64,
    pub tone_duration: f64,
    pub window_duration: f64,
    /// Time of the first sample (s).
    #[serde(default)]
    pub start_time: f64,
    /// Tone start times (s); detected from band energy when absent.
    #[serde(default)]
    pub tone_onsets: Option<Vec<f64>>,
    /// Absolute level treated as saturation; the channel maximum otherwise.
    #[serde(default)]
    pub clip_level: Option<f64>,
}

impl RecordingMeta {
    pub fn channels(&self) -> usize {
        self.hydrophone_depths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != RECORDING_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported recording format_version {}", self.format_version)));
        }
        let fmax = self.frequencies.iter().cloned().fold(0.0, f64::max);
        if !(self.sample_rate > 2.0 * fmax) {
            return Err(Error::InvalidParameter("sample rate must exceed twice the highest frequency".into()));
        }
        if self.frequencies.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::InvalidParameter("frequencies must be positive".into()));
        }
        if !(self.window_duration > 0.0 && self.window_duration <= self.tone_duration) {
            return Err(Error::InvalidParameter("window must be positive and no longer than the tone".into()));
        }
        if !(self.repetition_period > 0.0) {
            return Err(Error::InvalidParameter("repetition period must be positive".into()));
        }
        if self.hydrophone_depths.is_empty() {
            return Err(Error::InvalidParameter("recording has no channels".into()));
        }
        Ok(())
    }
}

/// Channel-interleaved samples with their metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub meta: RecordingMeta,
    pub samples: Vec<f32>,
}

impl Recording {
    pub fn new(meta: RecordingMeta, samples: Vec<f32>) -> Result<Self> {
        meta.validate()?;
        if !samples.len().is_multiple_of(meta.channels()) {
            return Err(Error::DimensionMismatch { expected: meta.channels(), got: samples.len() % meta.channels() });
        }
        Ok(Self { meta, samples })
    }

    pub fn frames(&self) -> usize {
        self.samples.len() / self.meta.channels()
    }

    fn sample(&self, frame: usize, channel: usize) -> f64 {
        f64::from(self.samples[frame * self.meta.channels() + channel])
    }
}

fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}

/// Writes little-endian `f32` samples to `data` and the metadata to the
/// sibling `.json` file.
pub fn write_recording(rec: &Recording, data: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(data)?);
    for s in &rec.samples {
        w.write_all(&s.to_le_bytes())?;
    }
    w.flush()?;
    let side = BufWriter::new(fs::File::create(sidecar_path(data))?);
    serde_json::to_writer_pretty(side, &rec.meta)?;
    Ok(())
}

pub fn read_recording(data: &Path) -> Result<Recording> {
    let meta: RecordingMeta = serde_json::from_reader(BufReader::new(fs::File::open(sidecar_path(data))?))?;
    let mut bytes = Vec::new();
    BufReader::new(fs::File::open(data)?).read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format("recording length is not a whole number of f32 samples".into()));
    }
    let samples = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    Recording::new(meta, samples)
}

/// Symmetric Hann window of length `m` sampled at bin centres.
pub fn hann_window(m: usize) -> Vec<f64> {
    (0..m)
        .map(|k| {
            let s = (std::f64::consts::PI * (k as f64 + 0.5) / m as f64).sin();
            s * s
        })
        .collect()
}

/// `Σ_k w_k s_k e^{-2πi f t_k}` with `t_k = t0 + k / fs`.
pub fn hann_coefficient<I>(samples: I, window: &[f64], t0: f64, fs: f64, freq: f64) -> Complex<f64>
where
    I: IntoIterator<Item = Complex<f64>>,
{
    let step = Complex::from_polar(1.0, -std::f64::consts::TAU * freq / fs);
    let mut rot = Complex::from_polar(1.0, -std::f64::consts::TAU * freq * t0);
    let mut acc = Complex::new(0.0, 0.0);
    for (k, (s, w)) in samples.into_iter().zip(window).enumerate() {
        acc += s * rot * *w;
        rot *= step;
        if k % 1024 == 1023 {
            // re-anchor the recursive phasor to bound rounding drift
            rot = Complex::from_polar(1.0, -std::f64::consts::TAU * freq * (t0 + (k + 1) as f64 / fs));
        }
    }
    acc
}

/// Band power at `freq` summed over channels on overlapping short frames;
/// returns frame start times and powers.
fn band_power_frames(rec: &Recording, freq: f64) -> (Vec<f64>, Vec<f64>) {
    let fs = rec.meta.sample_rate;
    let len = ((FRAME_SECONDS * fs).round() as usize).max(4);
    let hop = ((HOP_SECONDS * fs).round() as usize).max(1);
    let w = hann_window(len);
    let mut times = Vec::new();
    let mut powers = Vec::new();
    let mut start = 0;
    while start + len <= rec.frames() {
        let t0 = rec.meta.start_time + start as f64 / fs;
        let mut p = 0.0;
        for c in 0..rec.meta.channels() {
            let it = (start..start + len).map(|k| Complex::new(rec.sample(k, c), 0.0));
            p += hann_coefficient(it, &w, t0, fs, freq).norm_sqr();
        }
        times.push(t0);
        powers.push(p);
        start += hop;
    }
    (times, powers)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        0.0
    } else {
        v[v.len() / 2]
    }
}

/// Tone start times at `freq`: runs of frames whose band power exceeds the
/// median by 6 dB for at least half a second.
pub fn detect_onsets(rec: &Recording, freq: f64) -> Vec<f64> {
    let (times, powers) = band_power_frames(rec, freq);
    let threshold = median(&powers) * 10f64.powf(THRESHOLD_DB / 10.0);
    let mut onsets = Vec::new();
    let mut run_start: Option<usize> = None;
    for i in 0..=powers.len() {
        let above = i < powers.len() && powers[i] > threshold && powers[i] > 0.0;
        match (above, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                let dwell = times[i - 1] - times[s] + FRAME_SECONDS;
                if dwell >= MIN_DWELL_SECONDS {
                    onsets.push(times[s]);
                }
                run_start = None;
            }
            _ => {}
        }
    }
    onsets
}

fn tone_present(times: &[f64], powers: &[f64], onset: f64, tone: f64) -> bool {
    let threshold = median(powers) * 10f64.powf(THRESHOLD_DB / 10.0);
    times.iter().zip(powers).any(|(t, p)| *t >= onset && *t + FRAME_SECONDS <= onset + tone && *p > threshold)
}

fn clipped_channels(rec: &Recording) -> Vec<usize> {
    (0..rec.meta.channels())
        .filter(|&c| {
            let level = rec.meta.clip_level.unwrap_or_else(|| (0..rec.frames()).map(|k| rec.sample(k, c).abs()).fold(0.0, f64::max));
            if level <= 0.0 {
                return false;
            }
            let mut run = 0;
            for k in 0..rec.frames() {
                if rec.sample(k, c).abs() >= level {
                    run += 1;
                    if run >= CLIP_RUN {
                        return true;
                    }
                } else {
                    run = 0;
                }
            }
            false
        })
        .collect()
}

/// Extracted coefficients with the repetitions that had to be skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub snapshots: SnapshotSet<f64>,
    /// `(frequency, repetition)` pairs with no usable tone.
    pub skipped: Vec<(f64, usize)>,
    pub clipped_channels: Vec<usize>,
}

/// Hann-windowed Fourier coefficients of every tone, with the window
/// centred in the tone.
pub fn extract_coefficients(rec: &Recording) -> Result<Extraction> {
    rec.meta.validate()?;
    let meta = &rec.meta;
    let fs = meta.sample_rate;
    let clipped = clipped_channels(rec);
    for c in &clipped {
        warn!("channel {c} appears clipped");
    }
    let m = (meta.window_duration * fs).round() as usize;
    let window = hann_window(m);
    let mut snapshots = Vec::new();
    let mut skipped = Vec::new();
    for &f in &meta.frequencies {
        let (times, powers) = band_power_frames(rec, f);
        let onsets = match &meta.tone_onsets {
            Some(o) => o.clone(),
            None => detect_onsets(rec, f),
        };
        for (rep, &onset) in onsets.iter().enumerate() {
            if meta.tone_onsets.is_some() && !tone_present(&times, &powers, onset, meta.tone_duration) {
                warn!("tone not found at {f} Hz, repetition {rep}; skipped");
                skipped.push((f, rep));
                continue;
            }
            let centre = onset + 0.5 * meta.tone_duration;
            let first = ((centre - 0.5 * meta.window_duration - meta.start_time) * fs).round();
            if first < 0.0 || first as usize + m > rec.frames() {
                warn!("window for {f} Hz, repetition {rep} leaves the recording; skipped");
                skipped.push((f, rep));
                continue;
            }
            let first = first as usize;
            let t0 = meta.start_time + first as f64 / fs;
            let values = (0..meta.channels())
                .map(|c| {
                    let it = (first..first + m).map(|k| Complex::new(rec.sample(k, c), 0.0));
                    hann_coefficient(it, &window, t0, fs, f)
                })
                .collect();
            snapshots.push(Snapshot { freq_hz: f, rep, values });
        }
    }
    let snapshots = SnapshotSet::new(meta.hydrophone_depths.clone(), snapshots)?;
    Ok(Extraction { snapshots, skipped, clipped_channels: clipped })
}
