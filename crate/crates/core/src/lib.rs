//! Interaction-aware highway traffic prediction and scenario-based model
//! predictive control with a worst-case braking branch.
//!
//! The crate is organised bottom-up:
//!
//! * [`types`] — states, vehicles, lanes, policy modes and the jerk model.
//! * [`policy`] — LQR gain synthesis and per-mode closed-loop dynamics.
//! * [`imm`] — priority-ordered IMM Kalman filtering and horizon prediction.
//! * [`scenario`] — joint maneuver enumeration, thresholding and the
//!   worst-case braking scenario.
//! * [`qp`] — dense active-set QP and small mixed-integer QP solvers.
//! * [`mpc`] — condensed two-branch controller and mode decision.
//! * [`sim`] — track ingestion, synthetic scenes, closed-loop driver, logs.

// `!(x > 0.0)` guards deliberately reject NaN, and the numeric kernels index
// several arrays in lockstep.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod imm;
pub mod mpc;
pub mod par;
pub mod policy;
pub mod qp;
pub mod scenario;
pub mod sim;
pub mod types;

pub use error::{Error, Result};
