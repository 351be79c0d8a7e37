//! Time-optimal quadrotor trajectory planning.
//!
//! The crate has two halves. [`model`] and [`pmp`] implement the planar
//! non-dimensional model and its maximum-principle analysis: adjoint
//! closed forms, switching functions, singular flows and an extremal
//! shooter. [`flatness`], [`traj`] and [`solver`] implement the planner:
//! piecewise-polynomial flat outputs optimized for minimum time under
//! body-rate and rotor-thrust limits. [`oracle`] holds independent
//! references used for validation.

pub mod dual;
pub mod error;
pub mod flatness;
pub mod model;
pub mod oracle;
pub mod pmp;
pub mod solver;
pub mod traj;

pub use error::{Error, Result};
