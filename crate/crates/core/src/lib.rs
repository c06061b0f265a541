//! Continuous-time economic dispatch and marginal pricing of power trajectories.
//!
//! The crate transcribes a dispatch scenario (load profile, units with power,
//! ramp, and energy bids) into a convex QP by collocation, solves it with a
//! primal-dual interior-point method, maps the discrete duals back to
//! continuous-time multiplier trajectories, and checks the resulting prices
//! against the closed-form marginal-price identities.

pub mod dispatch;
pub mod error;
pub mod market_model;
pub mod pricing;
pub mod qp_solver;
pub mod trajectory;
pub mod transcribe;
pub mod verify;

pub use error::{Error, Result};
