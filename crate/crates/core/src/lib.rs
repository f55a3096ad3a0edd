//! Statistical forward modelling and inversion for randomly perturbed
//! shallow-water waveguides.

// `!(x > 0)` deliberately rejects NaN; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod coupling;
pub mod error;
pub mod field;
pub mod inversion;
pub mod modes;
pub mod moments;
pub mod montecarlo;
pub mod numerics;
pub mod overlap;
pub mod pipeline;
pub mod real;

pub use error::{Error, Result};
pub use real::Real;

/// Double-precision instantiations of the main generic types.
pub mod f64 {
    pub type EnvironmentParams = crate::modes::EnvironmentParams<f64>;
    pub type ModeSet = crate::modes::ModeSet<f64>;
    pub type CouplingModel = crate::coupling::CouplingModel<f64>;
    pub type MomentState = crate::moments::MomentState<f64>;
    pub type ArrayGeometry = crate::field::ArrayGeometry<f64>;
    pub type SnapshotSet = crate::pipeline::SnapshotSet<f64>;
    pub type InverseProblem = crate::inversion::InverseProblem<f64>;
}

/// Single-precision instantiations of the main generic types.
pub mod f32 {
    pub type EnvironmentParams = crate::modes::EnvironmentParams<f32>;
    pub type ModeSet = crate::modes::ModeSet<f32>;
    pub type CouplingModel = crate::coupling::CouplingModel<f32>;
    pub type MomentState = crate::moments::MomentState<f32>;
    pub type ArrayGeometry = crate::field::ArrayGeometry<f32>;
    pub type SnapshotSet = crate::pipeline::SnapshotSet<f32>;
    pub type InverseProblem = crate::inversion::InverseProblem<f32>;
}
