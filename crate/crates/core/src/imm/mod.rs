//! Interaction-aware multi-model prediction of surrounding vehicles.
//!
//! Every target vehicle carries a bank of six mode-matched Kalman filters
//! (velocity tracking or distance keeping × target lane) mixed through a
//! Markov transition matrix. Vehicles are processed in priority order so
//! that a follower's distance-keeping predictions and its no-collision
//! projection can use the already-finished predictions of the vehicles in
//! front of it.

mod bank;
mod fan;
mod filter;
mod predict;
mod projection;

pub use bank::{priority_order, ModeBelief, Tracker, VehicleFilter};
pub use fan::PredictionFan;
pub use filter::{
    apply_floor, fuse, gaussian_log_likelihood, kf_step, mix, symmetrize, update_probabilities, KfStep, Mixed,
    TransitionMatrix,
};
pub use predict::{constant_velocity, predict_horizon, predict_mode, LeadSource, ModePrediction};
pub use projection::{
    gap_requirement, project_no_collision, LeaderTrack, Projection, ProjectionSettings, ProjectionStatus,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Longitudinal, PolicyMode, M};

/// Noise, transition and projection parameters of the predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImmConfig {
    /// Self-transition probability of the default transition matrix.
    pub self_transition: f64,
    /// Full transition matrix; overrides `self_transition` when set.
    pub transition: Option<TransitionMatrix>,
    /// Process noise variances of (p, v, a) longitudinal and lateral.
    pub q_common: [f64; 6],
    /// Random-walk variance of the reference parameter for VT and DK modes.
    pub q_ref: [f64; 2],
    /// Measurement noise variances of (p, v, a) longitudinal and lateral.
    pub r_common: [f64; 6],
    /// Variance of the reference pseudo-measurement for VT and DK modes.
    pub r_ref: [f64; 2],
    /// Regularization added to the longitudinal covariance when scoring a
    /// projection correction.
    pub projection_eps: f64,
    /// Lower bound applied to every mode probability after each update.
    pub mu_floor: f64,
    pub projection: ProjectionSettings,
}

impl Default for ImmConfig {
    fn default() -> Self {
        Self {
            self_transition: 0.925,
            transition: None,
            q_common: [1e-6, 1e-5, 2e-3, 1e-6, 1e-5, 2e-3],
            q_ref: [1e-3, 1e-5],
            r_common: [0.01, 0.04, 0.04, 0.01, 0.04, 0.04],
            r_ref: [4.0, 0.04],
            projection_eps: 0.1,
            mu_floor: 1e-6,
            projection: ProjectionSettings::default(),
        }
    }
}

impl ImmConfig {
    pub fn transition_matrix(&self) -> Result<TransitionMatrix> {
        let t = match &self.transition {
            Some(t) => t.clone(),
            None => TransitionMatrix::with_self_transition(self.self_transition)?,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        self.transition_matrix()?;
        let pos = |name: &str, v: &[f64]| -> Result<()> {
            if v.iter().all(|&x| x.is_finite() && x >= 0.0) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite and non-negative")))
            }
        };
        pos("q_common", &self.q_common)?;
        pos("q_ref", &self.q_ref)?;
        if !self.r_common.iter().chain(&self.r_ref).all(|&x| x.is_finite() && x > 0.0) {
            return Err(Error::Config("measurement variances must be positive".into()));
        }
        if !(self.projection_eps > 0.0) || !(0.0..1.0 / M as f64).contains(&self.mu_floor) {
            return Err(Error::Config("projection_eps must be positive and mu_floor in [0, 1/6)".into()));
        }
        Ok(())
    }

    fn ref_slot(mode: PolicyMode) -> usize {
        match mode.longitudinal {
            Longitudinal::VT => 0,
            Longitudinal::DK => 1,
        }
    }

    /// 7×7 process noise of `mode` in the full-state layout.
    pub fn process_noise(&self, mode: PolicyMode) -> DMatrix<f64> {
        let c = &self.q_common;
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c[0],
            c[1],
            c[2],
            self.q_ref[Self::ref_slot(mode)],
            c[3],
            c[4],
            c[5],
        ]))
    }

    /// 7×7 measurement noise of `mode` in the full-state layout.
    pub fn measurement_noise(&self, mode: PolicyMode) -> DMatrix<f64> {
        let c = &self.r_common;
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c[0],
            c[1],
            c[2],
            self.r_ref[Self::ref_slot(mode)],
            c[3],
            c[4],
            c[5],
        ]))
    }
}
