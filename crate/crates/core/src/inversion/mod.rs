//! Estimation of seabed and medium parameters from correlation radii.

mod least_squares;
mod nelder_mead;
mod problem;

pub use least_squares::{levenberg_marquardt, LeastSquaresOutcome};
pub use nelder_mead::{nelder_mead, SimplexOptions, SimplexOutcome};
pub use problem::{
    minimize, misfit, sensitivity, sensitivity_ranking, InverseProblem, InversionOptions, InversionResult, KnownParams,
    MisfitEvaluation, Param, ParamBounds, PolishOptions, ParamSensitivity, SeabedParams, SensitivityCurve, StartSummary, TraceEntry,
};
