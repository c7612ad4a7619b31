//! Dynamic optimal transport flows for unsupervised domain translation.
//!
//! A [`flow::FlowModel`] moves samples of a source cloud along `K` explicit
//! Euler steps of learned velocity fields. Training minimizes the kinetic
//! (dynamic) transport cost of the trajectories plus a growing penalty on the
//! discrepancy between the transported cloud and the target cloud. The
//! [`oracles`] module provides exact transport solutions used to check that
//! the learned maps are optimal, invertible and geodesic.

pub mod costs;
pub mod discrepancy;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod format;
pub mod measures;
pub mod numerics;
pub mod oracles;
pub mod training;

pub use error::{Error, Result};
