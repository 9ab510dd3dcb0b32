//! Experiment configuration: one JSON document holding the scene and every
//! module's parameters. Every key is optional and defaults to the values
//! used in the highway study.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tracks::AxisTransform;
use crate::error::{Error, Result};
use crate::imm::ImmConfig;
use crate::mpc::ControllerConfig;
use crate::policy::GainConfig;
use crate::scenario::{DEFAULT_CAP, DEFAULT_THRESHOLD};
use crate::types::{CommonState, LaneGeometry, PolicyMode, Vehicle, VehicleParams};

/// Current version of the configuration and log schemas.
pub const SCHEMA_VERSION: u32 = 1;

/// Scenario generation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// Probability below which a scenario is dropped.
    pub threshold: f64,
    /// Upper bound on the number of enumerated scenarios.
    pub cap: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, cap: DEFAULT_CAP }
    }
}

/// Identity, footprint and initial state of a scripted vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub id: u32,
    pub length: f64,
    pub width: f64,
    pub state: CommonState,
}

impl VehicleSpec {
    pub fn vehicle(&self) -> Vehicle {
        Vehicle { params: VehicleParams { id: self.id, length: self.length, width: self.width }, state: self.state }
    }
}

/// How a scripted target vehicle moves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Behavior {
    /// Straight ahead at the initial longitudinal speed; lateral velocity
    /// and both accelerations are zeroed.
    ConstantVelocity,
    /// Constant velocity until `start`, then constant deceleration `decel`
    /// (negative) down to standstill.
    Brake { start: f64, decel: f64 },
    /// Closed-loop policy model of one mode with reference `r_ref` (desired
    /// speed for VT, time gap for DK behind the nearest vehicle ahead).
    Policy { mode: PolicyMode, r_ref: f64 },
}

/// A scripted target vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    #[serde(flatten)]
    pub vehicle: VehicleSpec,
    pub behavior: Behavior,
}

/// Hand-written scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub ego: VehicleSpec,
    #[serde(default)]
    pub targets: Vec<TargetSpec>,
}

/// Scene cut from a recorded track file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScene {
    /// Track CSV; relative paths resolve against the config file.
    pub path: PathBuf,
    #[serde(default)]
    pub transform: AxisTransform,
    pub ego_id: u32,
    pub start_frame: u32,
    /// Target vehicles to replay; all vehicles present at each frame when
    /// omitted.
    #[serde(default)]
    pub targets: Option<Vec<u32>>,
}

/// Randomized adversarial scene drawn from the experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StressScene {
    /// Number of target vehicles; drawn from 1..=3 when omitted.
    pub targets: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneSpec {
    Synthetic(SyntheticScene),
    Dataset(DatasetScene),
    Stress(StressScene),
}

/// Complete description of one closed-loop experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    /// Simulated time (s).
    pub duration: f64,
    /// Filter period (s); the control period lives in the controller
    /// section and must be an integer multiple of it.
    pub filter_period: f64,
    pub lanes: LaneGeometry,
    pub gains: GainConfig,
    pub imm: ImmConfig,
    pub scenario: ScenarioConfig,
    pub controller: ControllerConfig,
    /// Standard deviations of the noise added to target measurements, in
    /// the common-state layout; exact measurements when omitted.
    pub measurement_noise: Option<[f64; 6]>,
    /// Re-check the shifted previous worst-case plan at every control step.
    pub verify_feasibility: bool,
    pub scene: SceneSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: "experiment".into(),
            seed: 0,
            duration: 10.0,
            filter_period: 0.04,
            lanes: LaneGeometry::default(),
            gains: GainConfig::default(),
            imm: ImmConfig::default(),
            scenario: ScenarioConfig::default(),
            controller: ControllerConfig::default(),
            measurement_noise: None,
            verify_feasibility: false,
            scene: SceneSpec::Stress(StressScene::default()),
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file; dataset paths are made relative to its folder.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
        if let SceneSpec::Dataset(d) = &mut cfg.scene {
            if d.path.is_relative() {
                if let Some(dir) = path.parent() {
                    d.path = dir.join(&d.path);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Filter steps per control step; the ratio must be an integer.
    pub fn control_ratio(&self) -> Result<usize> {
        let r = self.controller.tp / self.filter_period;
        let n = r.round();
        if !(n >= 1.0 && (r - n).abs() < 1e-9) {
            return Err(Error::Config(format!(
                "control period {} s is not an integer multiple of the filter period {} s",
                self.controller.tp, self.filter_period
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported schema version {} (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Config(format!("duration must be positive, got {}", self.duration)));
        }
        if !(self.filter_period > 0.0) {
            return Err(Error::Config(format!("filter period must be positive, got {}", self.filter_period)));
        }
        self.lanes.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.imm.validate()?;
        self.controller.validate()?;
        self.control_ratio()?;
        if !(0.0..1.0).contains(&self.scenario.threshold) || self.scenario.cap == 0 {
            return Err(Error::Config("scenario threshold must lie in [0, 1) and the cap be positive".into()));
        }
        if let Some(n) = &self.measurement_noise {
            if n.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
                return Err(Error::Config("measurement noise deviations must be non-negative".into()));
            }
        }
        match &self.scene {
            SceneSpec::Synthetic(s) => {
                let mut ids = std::collections::BTreeSet::new();
                for v in std::iter::once(&s.ego).chain(s.targets.iter().map(|t| &t.vehicle)) {
                    v.vehicle().params.validate()?;
                    v.state.validate()?;
                    if !ids.insert(v.id) {
                        return Err(Error::Config(format!("duplicate vehicle id {}", v.id)));
                    }
                }
                self.lanes.lane_of(s.ego.state.p_lat)?;
                for t in &s.targets {
                    if let Behavior::Brake { decel, start } = t.behavior {
                        if !(decel < 0.0 && start >= 0.0) {
                            return Err(Error::Config(format!("vehicle {}: braking needs decel < 0 and start ≥ 0", t.vehicle.id)));
                        }
                    }
                }
            }
            SceneSpec::Dataset(d) => d.transform.validate()?,
            SceneSpec::Stress(s) => {
                if let Some(n) = s.targets {
                    if !(1..=3).contains(&n) {
                        return Err(Error::Config(format!("stress scenes take 1 to 3 targets, got {n}")));
                    }
                }
            }
        }
        Ok(())
    }
}
