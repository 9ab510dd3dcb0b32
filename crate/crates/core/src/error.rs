//! Crate-wide error type.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Every failure mode surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("lateral position {p_lat} m is outside the road [{l_lb}, {l_ub}]")]
    OutOfRoad { p_lat: f64, l_lb: f64, l_ub: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("unknown lane index {0}")]
    UnknownLane(u8),

    #[error("gain synthesis failed: {0}")]
    Synthesis(String),

    #[error("distance-keeping mode needs a lead vehicle state")]
    MissingLeadVehicle,

    #[error("priority ordering violated: vehicle {follower} needs the prediction of vehicle {leader}")]
    OrderingViolation { follower: u32, leader: u32 },

    #[error("residual covariance is not positive definite")]
    SingularCovariance,

    #[error("{count} scenarios exceed the cap of {cap}; prune modes by threshold before enumerating")]
    ScenarioCap { count: usize, cap: usize },

    #[error("every scenario falls below the probability threshold {0}")]
    AllBelowThreshold(f64),

    #[error("lane change from lane {from} to lane {to} skips a lane")]
    NonAdjacentTarget { from: u8, to: u8 },

    #[error("QP dimensions inconsistent: {0}")]
    Dimension(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("collision between ego and vehicle {id} at t = {time:.2} s")]
    Collision { id: u32, time: f64 },

    #[error("controller infeasible at t = {time:.2} s after a feasible start")]
    RecursiveFeasibility { time: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
