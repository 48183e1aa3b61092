//! Dual-control reference generation for manipulators carrying payloads with
//! uncertain inertial parameters.
//!
//! The crate optimizes B-spline joint references against closed-loop rollouts of
//! adaptive controllers, under uncertainty-aware objectives:
//!
//! * the robust expected task cost, evaluated with first-order moment
//!   propagation over a Gaussian-mixture parameter prior, and
//! * the task cost augmented with an optimality-loss weighted information term,
//!
//! and compares them with a nominal reference and a Fisher-information
//! (T-optimal) reference on a payload benchmark.

pub mod control;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod objective;
pub mod reference;
pub mod simloop;
pub mod trajopt;
pub mod uq;
pub mod bench;

pub use error::{Error, Result};
