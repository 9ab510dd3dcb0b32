//! Experiment harness: recorded-track ingestion, scene construction, the
//! closed-loop driver, logs and latency benchmarks.

mod bench;
mod config;
mod log;
mod run;
mod scenes;
mod tracks;
mod world;

pub use bench::{bench, BenchReport};
pub use config::{
    Behavior, DatasetScene, ExperimentConfig, ScenarioConfig, SceneSpec, StressScene, SyntheticScene, TargetSpec,
    VehicleSpec, SCHEMA_VERSION,
};
pub use log::{
    read_jsonl, write_csv, write_jsonl, write_predictions_csv, write_predictions_jsonl, FanLog, Forensics, LaneChange, ModeLog, ModeSwitch, RunStatus, ScenarioLog,
    ShiftSummary, StepFlags, StepLog, StepTiming, Summary, TimingStats,
};
pub use run::{build_world, run_closed_loop, run_prediction, scenarios_for, PredictionLog, RunOutput};
pub use scenes::{case1, case2, draw_stress_scene, empty_road, stress};
pub use tracks::{
    ingest_tracks, ingest_tracks_from_reader, write_tracks, Anchor, AxisTransform, Track, TrackRecord, TrackStore,
    REQUIRED_COLUMNS,
};
pub use world::World;
