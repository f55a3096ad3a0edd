//! JSON run configuration shared by every subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shallowmode::field::{ArrayGeometry, ForwardOptions};
use shallowmode::inversion::{KnownParams, Param, ParamBounds, PolishOptions, SeabedParams, SimplexOptions};
use shallowmode::modes::{EnvironmentParams, SourceSpec};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub water: KnownParams<f64>,
    pub seabed: SeabedParams<f64>,
    pub source: SourceSpec<f64>,
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub frequencies: Vec<f64>,
    #[serde(default)]
    pub forward: ForwardOptions,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub scintillation: ScintillationConfig,
    #[serde(default)]
    pub inversion: InversionConfig,
    #[serde(default)]
    pub sensitivity: SensitivityConfig,
}

/// Receiving array: explicit depths, or `count` hydrophones `spacing`
/// apart centred on `centre`. The range is the source range.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub spacing: f64,
    #[serde(default)]
    pub centre: Option<f64>,
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub hydrophone_depths: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub paths: usize,
    /// Range step; chosen from the fastest rate when absent.
    pub dx: Option<f64>,
    /// End range; the source range when absent.
    pub x_end: Option<f64>,
    pub record_every: Option<usize>,
    /// Snapshots synthesised per frequency from the final path powers.
    pub snapshots: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { paths: 1000, dx: None, x_end: None, record_every: None, snapshots: 0 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScintillationConfig {
    /// Snapshot CSV for the empirical column, relative to the config file.
    pub snapshots: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionConfig {
    pub bounds: ParamBounds<f64>,
    pub starts: usize,
    pub simplex: SimplexOptions,
    pub polish: PolishOptions,
}

impl Default for InversionConfig {
    fn default() -> Self {
        let d = shallowmode::inversion::InversionOptions::default();
        Self { bounds: ParamBounds::default(), starts: d.starts, simplex: d.simplex, polish: d.polish }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityConfig {
    /// Values swept per parameter; parameters left out use multiples of
    /// the configured value (speed: ±20 m/s).
    pub values: BTreeMap<Param, Vec<f64>>,
    /// Relative step of the log-derivative ranking.
    pub log_step: f64,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self { values: BTreeMap::new(), log_step: 0.01 }
    }
}

impl SensitivityConfig {
    pub fn sweep(&self, phi0: &SeabedParams<f64>, p: Param) -> Vec<f64> {
        if let Some(v) = self.values.get(&p) {
            return v.clone();
        }
        let v = phi0.get(p);
        match p {
            Param::CS => vec![v - 20.0, v, v + 20.0],
            _ => vec![0.5 * v, v, 2.0 * v],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(snap) = &cfg.scintillation.snapshots {
            if snap.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.scintillation.snapshots = Some(base.join(snap));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.environment().validate()?;
        self.source.validate(self.water.z_b)?;
        self.geometry()?.validate(self.water.z_b)?;
        if self.frequencies.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return Err(CliError::Config("frequencies must be positive".into()));
        }
        Ok(())
    }

    pub fn environment(&self) -> EnvironmentParams<f64> {
        self.seabed.environment(&self.water)
    }

    pub fn geometry(&self) -> Result<ArrayGeometry<f64>, CliError> {
        let g = &self.geometry;
        let x_a = self.source.x_a;
        match (&g.hydrophone_depths, g.centre, g.count) {
            (Some(depths), None, None) => {
                let (Some(first), Some(last)) = (depths.first(), depths.last()) else {
                    return Err(CliError::Config("hydrophone_depths is empty".into()));
                };
                Ok(ArrayGeometry { x_a, z_m: *first, z_max: *last, hydrophone_depths: depths.clone(), spacing: g.spacing })
            }
            (None, Some(centre), Some(count)) => Ok(ArrayGeometry::uniform(x_a, centre, count, g.spacing)?),
            _ => Err(CliError::Config("geometry needs either hydrophone_depths or both centre and count".into())),
        }
    }
}
