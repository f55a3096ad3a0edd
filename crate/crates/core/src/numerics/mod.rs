//! Numerical building blocks: quadrature, bracketing root finders, dense
//! linear algebra and an adaptive Runge-Kutta integrator.

pub mod linalg;
pub mod ode;
pub mod quadrature;
pub mod roots;

pub use linalg::{DenseMatrix, SymmetricEigen};
pub use quadrature::GaussLegendre;
