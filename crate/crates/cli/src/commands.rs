//! Subcommand implementations. Each computes its tables, then writes them
//! into the output directory.

use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use log::{info, warn};
use shallowmode::field::{forward_radii, frequency_setup, ArrayGeometry};
use shallowmode::inversion::{
    minimize, sensitivity, sensitivity_ranking, InverseProblem, InversionOptions, Param,
};
use shallowmode::modes::solve_modes;
use shallowmode::moments::{propagate, scintillation_index};
use shallowmode::montecarlo::{simulate_powers, synthesize_snapshots, PowerSource, SimulationOptions};
use shallowmode::pipeline::{empirical_scintillation, read_snapshots_csv, write_snapshots_csv, ArmPooling, SnapshotSet};
use shallowmode::Error;

use crate::config::RunConfig;
use crate::error::CliError;

/// Fraction of the fastest decay rate used as the default simulation step.
const DEFAULT_STEP_FRACTION: f64 = 0.05;

pub struct Output {
    dir: PathBuf,
}

impl Output {
    pub fn new(dir: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&dir).map_err(|source| CliError::Output { path: dir.display().to_string(), source })?;
        Ok(Self { dir })
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|source| CliError::Output { path: path.display().to_string(), source })?;
        info!("wrote {}", path.display());
        Ok(path)
    }

    pub fn create(&self, name: &str) -> Result<(PathBuf, fs::File), CliError> {
        let path = self.dir.join(name);
        let file = fs::File::create(&path).map_err(|source| CliError::Output { path: path.display().to_string(), source })?;
        Ok((path, file))
    }
}

fn omega(freq_hz: f64) -> f64 {
    std::f64::consts::TAU * freq_hz
}

pub fn modes(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let env = cfg.environment();
    let mut csv = String::from("freq_hz,mode,beta,sigma,zeta,amplitude\n");
    for &f in &cfg.frequencies {
        let set = match solve_modes(&env, omega(f)) {
            Ok(s) => s,
            Err(Error::NoGuidedModes { .. }) => {
                warn!("no guided modes at {f} Hz");
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        for j in 0..set.len() {
            let _ = writeln!(
                csv,
                "{f},{},{:.15e},{:.15e},{:.15e},{:.15e}",
                set.mode_numbers()[j],
                set.beta()[j],
                set.sigma()[j],
                set.zeta()[j],
                set.amplitude()[j]
            );
        }
    }
    out.write("modes.csv", &csv)?;
    Ok(())
}

pub fn forward(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let env = cfg.environment();
    let geom = cfg.geometry()?;
    let preds = forward_radii(&env, &cfg.source, &geom, &cfg.frequencies, &cfg.forward)?;
    let mut radii = String::from("freq_hz,n_modes,radius_m,reached\n");
    let mut curves = String::from("freq_hz,lag_m,correlation\n");
    for p in &preds {
        let _ = writeln!(radii, "{},{},{:.10e},{}", p.freq_hz, p.n_modes, p.radius, p.reached);
        for (y, c) in p.curve.y.iter().zip(&p.curve.values) {
            let _ = writeln!(curves, "{},{y:.6e},{c:.10e}", p.freq_hz);
        }
    }
    out.write("radii.csv", &radii)?;
    out.write("correlation.csv", &curves)?;
    Ok(())
}

pub fn simulate(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let env = cfg.environment();
    let geom = cfg.geometry()?;
    let sim = &cfg.simulate;
    let x_end = sim.x_end.unwrap_or(cfg.source.x_a);
    let mut moments = String::from("freq_hz,x_m,mode,mean,mean_se,theory_mean\n");
    let mut snapshot_sets: Vec<SnapshotSet<f64>> = Vec::new();
    for &f in &cfg.frequencies {
        let setup = frequency_setup(&env, &cfg.source, f, &cfg.forward)?;
        let c = &setup.coupling;
        let rate = (0..c.len()).map(|j| c.gamma[(j, j)].abs() + c.lambda[j]).fold(0.0, f64::max);
        let dx = sim.dx.unwrap_or(if rate > 0.0 { (DEFAULT_STEP_FRACTION / rate).min(x_end) } else { x_end });
        let opts = SimulationOptions { x_end, dx, n_paths: sim.paths, seed: cfg.seed, record_every: sim.record_every };
        info!("{f} Hz: {} modes, {} paths, dx = {dx:.4e} m", c.len(), sim.paths);
        let ens = simulate_powers(c, &setup.q0, &opts)?;
        for (k, x) in ens.x_grid.iter().enumerate() {
            let m = ens.moments(k)?;
            let theory = shallowmode::moments::propagate_q(c, &setup.q0, *x)?;
            for (j, th) in theory.iter().enumerate() {
                let _ = writeln!(moments, "{f},{x:.6e},{j},{:.10e},{:.3e},{th:.10e}", m.mean[j], m.mean_se[j]);
            }
        }
        if sim.snapshots > 0 {
            let finals = ens.final_powers();
            snapshot_sets.push(synthesize_snapshots(&setup.modes, PowerSource::Ensemble(&finals), &geom, f, sim.snapshots, cfg.seed)?);
        }
    }
    out.write("moments.csv", &moments)?;
    if let Some(first) = snapshot_sets.first() {
        let mut all = Vec::new();
        for set in &snapshot_sets {
            all.extend(set.snapshots.iter().cloned());
        }
        let merged = SnapshotSet::new(first.hydrophone_depths.clone(), all)?;
        let (path, file) = out.create("snapshots.csv")?;
        write_snapshots_csv(&merged, std::io::BufWriter::new(file))?;
        info!("wrote {}", path.display());
    }
    Ok(())
}

fn theoretical_scintillation(cfg: &RunConfig, geom: &ArrayGeometry<f64>, f: f64) -> Result<f64, CliError> {
    let setup = frequency_setup(&cfg.environment(), &cfg.source, f, &cfg.forward)?;
    let state = propagate(&setup.coupling, &setup.q0, cfg.source.x_a)?;
    Ok(scintillation_index(&setup.modes, &state, &geom.hydrophone_depths)?)
}

pub fn scintillation(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let geom = cfg.geometry()?;
    let snapshots = match &cfg.scintillation.snapshots {
        Some(path) => Some(read_snapshots(path)?),
        None => None,
    };
    let mut csv = String::from("freq_hz,theory,empirical,empirical_se,repetitions\n");
    for &f in &cfg.frequencies {
        let theory = theoretical_scintillation(cfg, &geom, f)?;
        let empirical = match &snapshots {
            Some(set) => match empirical_scintillation(set, f, ArmPooling::Independent) {
                Ok(e) => Some(e),
                Err(Error::InsufficientData(msg)) => {
                    warn!("{msg}");
                    None
                }
                Err(e) => return Err(e.into()),
            },
            None => None,
        };
        match empirical {
            Some(e) => {
                let _ = writeln!(csv, "{f},{theory:.10e},{:.10e},{:.3e},{}", e.value, e.std_error, e.repetitions);
            }
            None => {
                let _ = writeln!(csv, "{f},{theory:.10e},,,0");
            }
        }
    }
    out.write("scintillation.csv", &csv)?;
    Ok(())
}

fn read_snapshots(path: &Path) -> Result<SnapshotSet<f64>, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
    Ok(read_snapshots_csv(BufReader::new(file))?)
}

fn problem(cfg: &RunConfig, frequencies: Vec<f64>, observed: Vec<f64>) -> Result<InverseProblem<f64>, CliError> {
    let inv = &cfg.inversion;
    Ok(InverseProblem {
        known: cfg.water,
        source: cfg.source,
        geometry: cfg.geometry()?,
        frequencies,
        observed,
        bounds: inv.bounds,
        options: InversionOptions { starts: inv.starts, seed: cfg.seed, simplex: inv.simplex, polish: inv.polish, forward: cfg.forward },
    })
}

/// Reads `freq_hz,radius_m` rows; a non-numeric first line is a header.
pub fn read_observed(path: &Path) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let (mut freqs, mut radii) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = match fields.as_slice() {
            [f, r, ..] => f.parse::<f64>().and_then(|f| r.parse::<f64>().map(|r| (f, r))),
            _ => return Err(CliError::Config(format!("{}:{}: expected freq_hz,radius_m", path.display(), i + 1))),
        };
        match parsed {
            Ok((f, r)) => {
                freqs.push(f);
                radii.push(r);
            }
            Err(_) if i == 0 => continue,
            Err(e) => return Err(CliError::Config(format!("{}:{}: {e}", path.display(), i + 1))),
        }
    }
    Ok((freqs, radii))
}

pub fn invert(cfg: &RunConfig, observed: &Path, out: &Output) -> Result<(), CliError> {
    let (freqs, radii) = read_observed(observed)?;
    let problem = problem(cfg, freqs, radii)?;
    let result = minimize(&problem)?;
    info!("misfit {:.4e} at {:?}", result.misfit, result.phi_hat);
    if result.budget_exhausted {
        warn!("evaluation budget exhausted before convergence");
    }
    let json = serde_json::to_string_pretty(&result).map_err(Error::from)?;
    out.write("inversion.json", &json)?;
    Ok(())
}

pub fn sensitivity_tables(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let freqs = cfg.frequencies.clone();
    let placeholder = vec![1.0; freqs.len()];
    let problem = problem(cfg, freqs, placeholder)?;
    let phi0 = cfg.seabed;
    let mut csv = String::from("param,value,freq_hz,radius_m\n");
    for p in Param::ALL {
        let curve = sensitivity(&problem, &phi0, p, &cfg.sensitivity.sweep(&phi0, p))?;
        for (v, row) in curve.values.iter().zip(&curve.radii) {
            for (f, r) in curve.frequencies.iter().zip(row) {
                match r {
                    Some(r) => writeln!(csv, "{p},{v},{f},{r:.10e}"),
                    None => writeln!(csv, "{p},{v},{f},"),
                }
                .expect("writing to a string");
            }
        }
    }
    out.write("sensitivity.csv", &csv)?;
    let ranking = sensitivity_ranking(&problem, &phi0, cfg.sensitivity.log_step)?;
    let json = serde_json::to_string_pretty(&ranking).map_err(Error::from)?;
    out.write("ranking.json", &json)?;
    Ok(())
}
