//! Sensitivity of steady-state averages of overdamped Langevin dynamics
//! with respect to a forcing parameter, by tangent-vector simulation,
//! Green-Kubo integrals and common-noise finite differences, together with
//! the numerical checks (Poincaré constant, ρ criterion, decay rate) that
//! certify when those estimators have bounded variance.

pub mod analysis;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod merging;
pub mod parallel;
pub mod potentials;
pub mod quadrature;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
