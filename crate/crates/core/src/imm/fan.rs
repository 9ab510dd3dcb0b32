//! Per-vehicle prediction products consumed by the scenario engine.

use serde::{Deserialize, Serialize};

use crate::types::{CommonState, PolicyMode, M};

/// Predictions of one vehicle over the control horizon.
///
/// Trajectories are sampled at the control period and have `N + 1` entries;
/// entry 0 is the (projected) estimate at the current control instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFan {
    pub id: u32,
    /// Mode probabilities, indexed like [`PolicyMode::ALL`].
    pub mu: [f64; M],
    /// One projected trajectory per mode.
    pub modes: Vec<Vec<CommonState>>,
    /// Moment-matched fused trajectory.
    pub fused: Vec<CommonState>,
}

impl PredictionFan {
    /// Horizon length `N` (number of steps after the current instant).
    pub fn horizon(&self) -> usize {
        self.fused.len().saturating_sub(1)
    }

    /// Trajectory predicted under `mode`.
    pub fn mode_trajectory(&self, mode: PolicyMode) -> &[CommonState] {
        &self.modes[mode.index()]
    }

    /// Indices of the two most probable modes, most probable first; ties go
    /// to the lower index.
    pub fn top_two(&self) -> (usize, usize) {
        let mut idx: Vec<usize> = (0..M).collect();
        idx.sort_by(|&a, &b| self.mu[b].total_cmp(&self.mu[a]).then(a.cmp(&b)));
        (idx[0], idx[1])
    }

    /// A fan that follows one trajectory with certainty in `mode`.
    pub fn certain(id: u32, mode: PolicyMode, trajectory: Vec<CommonState>) -> Self {
        let mut mu = [0.0; M];
        mu[mode.index()] = 1.0;
        Self { id, mu, modes: vec![trajectory.clone(); M], fused: trajectory }
    }
}
