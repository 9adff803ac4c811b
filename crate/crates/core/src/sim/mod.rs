//! Closed-loop simulation and experiment harness.
//!
//! Each 10 Hz tick runs, in order: plant → sensors → NMHE → SLAM → planner →
//! NMPC. The command computed at tick `k` is applied by the plant over
//! `[t_k, t_{k+1}]`, so the controller never sees a measurement from the
//! future. All randomness comes from per-subsystem ChaCha streams derived
//! from the scenario seed.

mod experiments;
pub mod maps;
mod metrics;
mod mission;
mod output;
mod scenario;

use thiserror::Error;

pub use experiments::{
    ident_experiment, identify_datasets, parse_range, rounded_square, run_slam_loop, slam_experiment,
    sweep, with_override, AblationResult, IdentExperimentConfig, IdentExperimentReport,
    SlamAblationReport, SlamExperimentConfig, SweepPoint,
};
pub use metrics::{ChannelRmse, MetricsReport, ModuleTiming, RmsAccumulator, TimingReport, TICK_BUDGET_MS};
pub use mission::{
    return_error, run, LogRow, MissionLog, MissionOutput, RunOptions, GOAL_HEADING, GOAL_HOLD,
    GOAL_RADIUS, LOG_HEADER, SETTLE_TIME,
};
pub use output::{write_ident, write_mission, write_slam_ablation, write_sweep};
pub use scenario::{ControllerSpec, DisturbanceSpec, EstimatorSpec, GpsSpec, MapSpec, Scenario};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Dynamics(#[from] crate::dynamics::DynamicsError),
    #[error(transparent)]
    Planner(#[from] crate::planner::PlannerError),
    #[error(transparent)]
    Nmpc(#[from] crate::nmpc::NmpcError),
    #[error(transparent)]
    Nmhe(#[from] crate::nmhe::NmheError),
    #[error(transparent)]
    Slam(#[from] crate::slam::SlamError),
    #[error(transparent)]
    SysId(#[from] crate::sysid::SysIdError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
