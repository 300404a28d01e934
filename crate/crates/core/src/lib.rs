//! Fail-operational longitudinal control for an ego vehicle in a platoon of
//! human-driven vehicles.
//!
//! The pipeline per control tick is: learn the environmental disturbance
//! online with budgeted incremental Gaussian processes, turn the posterior
//! into a high-confidence box, build affine control-barrier rows and a
//! velocity-tracking Lyapunov constraint that are robust over that box, and
//! solve the slack-augmented program for a single longitudinal force.

pub mod clf_tracking;
pub mod disturbance_learner;
pub mod error;
pub mod incremental_gp;
pub mod kernel_gp;
pub mod optimize;
pub mod plant_sim;
pub mod qp_controller;
pub mod safety_barrier;
pub mod scenario;

pub use error::{Error, Result};
