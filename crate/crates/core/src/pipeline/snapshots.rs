use std::io::{BufRead, Write};

use num_complex::Complex;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::real::Real;

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;
const HEADER: &str = "freq_hz,rep,hydro_index,depth_m,re,im";
/// Depths closer than this are taken to be the same level on different arms.
const SAME_DEPTH: f64 = 1e-6;

/// Complex coefficients of one transmission at one frequency.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot<T> {
    pub freq_hz: T,
    pub rep: usize,
    pub values: Vec<Complex<T>>,
}

/// Snapshots over frequencies and repetitions for a fixed set of hydrophones.
///
/// Hydrophones sharing a depth belong to different vertical arms; the
/// `k`-th hydrophone at a given depth is assigned to arm `k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnapshotSet<T> {
    pub hydrophone_depths: Vec<T>,
    pub arms: Vec<usize>,
    pub snapshots: Vec<Snapshot<T>>,
}

impl<T: Real> SnapshotSet<T> {
    pub fn new(hydrophone_depths: Vec<T>, snapshots: Vec<Snapshot<T>>) -> Result<Self> {
        let nh = hydrophone_depths.len();
        if nh == 0 {
            return Err(Error::InsufficientData("no hydrophones".into()));
        }
        for s in &snapshots {
            if s.values.len() != nh {
                return Err(Error::DimensionMismatch { expected: nh, got: s.values.len() });
            }
            if s.values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) || !s.freq_hz.is_finite() {
                return Err(Error::Format(format!("non-finite value in repetition {}", s.rep)));
            }
        }
        if hydrophone_depths.iter().any(|z| !z.is_finite()) {
            return Err(Error::Format("non-finite hydrophone depth".into()));
        }
        let arms = infer_arms(&hydrophone_depths);
        Ok(Self { hydrophone_depths, arms, snapshots })
    }

    pub fn arm_count(&self) -> usize {
        self.arms.iter().max().map_or(0, |m| m + 1)
    }

    /// Distinct frequencies in order of first appearance.
    pub fn frequencies(&self) -> Vec<T> {
        let mut out: Vec<T> = Vec::new();
        for s in &self.snapshots {
            if !out.contains(&s.freq_hz) {
                out.push(s.freq_hz);
            }
        }
        out
    }

    pub fn at_frequency(&self, freq_hz: T) -> impl Iterator<Item = &Snapshot<T>> {
        self.snapshots.iter().filter(move |s| s.freq_hz == freq_hz)
    }
}

fn infer_arms<T: Real>(depths: &[T]) -> Vec<usize> {
    let tol = T::of(SAME_DEPTH);
    (0..depths.len())
        .map(|n| depths[..n].iter().filter(|z| (**z - depths[n]).abs() <= tol).count())
        .collect()
}

/// Writes `# format_version: 1`, the header, and one row per hydrophone
/// and snapshot. Values use the shortest representation that parses back
/// to the same number.
pub fn write_snapshots_csv<T: Real, W: Write>(set: &SnapshotSet<T>, mut w: W) -> Result<()> {
    writeln!(w, "# format_version: {SNAPSHOT_FORMAT_VERSION}")?;
    writeln!(w, "{HEADER}")?;
    for s in &set.snapshots {
        for (n, v) in s.values.iter().enumerate() {
            writeln!(w, "{},{},{},{},{},{}", s.freq_hz, s.rep, n, set.hydrophone_depths[n], v.re, v.im)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshots_csv<T: Real, R: BufRead>(r: R) -> Result<SnapshotSet<T>> {
    let mut version = None;
    let mut header_seen = false;
    let mut depths: Vec<Option<T>> = Vec::new();
    let mut snapshots: Vec<Snapshot<T>> = Vec::new();
    let mut index: std::collections::HashMap<(u64, usize), usize> = std::collections::HashMap::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("format_version:") {
                let v: u32 = v.trim().parse().map_err(|_| Error::Format(format!("bad format_version on line {}", lineno + 1)))?;
                version = Some(v);
            }
            continue;
        }
        if !header_seen {
            if line != HEADER {
                return Err(Error::Format(format!("expected header `{HEADER}`")));
            }
            header_seen = true;
            continue;
        }
        let bad = |what: &str| Error::Format(format!("line {}: bad {what}", lineno + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(bad("field count"));
        }
        let freq: T = fields[0].parse().map_err(|_| bad("freq_hz"))?;
        let rep: usize = fields[1].parse().map_err(|_| bad("rep"))?;
        let hydro: usize = fields[2].parse().map_err(|_| bad("hydro_index"))?;
        let depth: T = fields[3].parse().map_err(|_| bad("depth_m"))?;
        let re: T = fields[4].parse().map_err(|_| bad("re"))?;
        let im: T = fields[5].parse().map_err(|_| bad("im"))?;
        if hydro >= depths.len() {
            depths.resize(hydro + 1, None);
        }
        match depths[hydro] {
            Some(d) if d != depth => return Err(bad("depth (inconsistent with earlier rows)")),
            _ => depths[hydro] = Some(depth),
        }
        let key = (freq.to_f64_lossy().to_bits(), rep);
        let slot = *index.entry(key).or_insert_with(|| {
            snapshots.push(Snapshot { freq_hz: freq, rep, values: Vec::new() });
            snapshots.len() - 1
        });
        let values = &mut snapshots[slot].values;
        if hydro >= values.len() {
            values.resize(hydro + 1, Complex::new(T::nan(), T::nan()));
        }
        values[hydro] = Complex::new(re, im);
    }
    match version {
        Some(SNAPSHOT_FORMAT_VERSION) => {}
        Some(v) => return Err(Error::Format(format!("unsupported snapshot format_version {v}"))),
        None => return Err(Error::Format("missing format_version line".into())),
    }
    if !header_seen {
        return Err(Error::Format("missing header".into()));
    }
    let depths: Vec<T> = depths
        .into_iter()
        .enumerate()
        .map(|(n, d)| d.ok_or_else(|| Error::Format(format!("hydrophone {n} never appears"))))
        .collect::<Result<_>>()?;
    for s in &mut snapshots {
        if s.values.len() != depths.len() {
            s.values.resize(depths.len(), Complex::new(T::nan(), T::nan()));
        }
    }
    SnapshotSet::new(depths, snapshots)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SnapshotSet<f64> {
        let snaps = vec![
            Snapshot { freq_hz: 2000.0, rep: 0, values: vec![Complex::new(0.1, -1.0 / 3.0), Complex::new(1e-300, 2.5)] },
            Snapshot { freq_hz: 5000.0, rep: 3, values: vec![Complex::new(-7.0, 0.0), Complex::new(std::f64::consts::PI, 1e17)] },
        ];
        SnapshotSet::new(vec![57.675, 57.825], snaps).unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let s = sample();
        let mut buf = Vec::new();
        write_snapshots_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# format_version: 1\nfreq_hz,rep,hydro_index,depth_m,re,im\n"));
        let back: SnapshotSet<f64> = read_snapshots_csv(buf.as_slice()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn arms_follow_repeated_depths() {
        let s = SnapshotSet::<f64>::new(vec![1.0, 2.0, 1.0, 2.0], vec![]).unwrap();
        assert_eq!(s.arms, vec![0, 0, 1, 1]);
        assert_eq!(s.arm_count(), 2);
    }

    #[test]
    fn rejects_malformed_input() {
        let no_version = "freq_hz,rep,hydro_index,depth_m,re,im\n1,0,0,1,0,0\n";
        assert!(read_snapshots_csv::<f64, _>(no_version.as_bytes()).is_err());
        let bad_header = "# format_version: 1\nf,rep\n";
        assert!(read_snapshots_csv::<f64, _>(bad_header.as_bytes()).is_err());
        let missing = "# format_version: 1\nfreq_hz,rep,hydro_index,depth_m,re,im\n1,0,0,1,0,0\n1,0,2,3,0,0\n";
        assert!(read_snapshots_csv::<f64, _>(missing.as_bytes()).is_err());
        let future = "# format_version: 9\nfreq_hz,rep,hydro_index,depth_m,re,im\n";
        assert!(read_snapshots_csv::<f64, _>(future.as_bytes()).is_err());
    }
}
