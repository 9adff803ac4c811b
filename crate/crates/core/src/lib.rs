//! Autonomy stack for a small holonomic urban surface vessel.
//!
//! The crate is organised bottom-up:
//!
//! - [`dynamics`]: 3-DOF planar vessel model, thruster allocation, RK4 and the
//!   measurement model. Every other module uses it as the plant or the
//!   prediction model.
//! - [`solver`]: dense box-constrained QP and a bounded Gauss-Newton SQP loop.
//! - [`sysid`]: grey-box identification of the hydrodynamic parameters.
//! - [`nmpc`]: receding-horizon tracking controller.
//! - [`nmhe`]: moving-horizon state estimator.
//! - [`planner`]: A* on an occupancy grid and reference-window generation.
//! - [`slam`]: SE(2) pose graph with odometry, GPS and loop-closure factors.
//! - [`sim`]: closed-loop mission runner and the experiment harness.

// `!(a < b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod angle;
pub mod dynamics;
pub mod nmhe;
pub mod nmpc;
pub mod planner;
pub mod sim;
pub mod slam;
pub mod solver;
pub mod sysid;

pub use angle::wrap_angle;
pub use dynamics::{
    BodyVelocity, ControlInput, Disturbance, GeneralizedForce, HydroParams, Measurement,
    NoiseSpec, Pose, ThrusterGeometry, VesselModel, VesselState,
};
pub use nmhe::{MheConfig, MovingHorizonEstimator};
pub use nmpc::{NmpcConfig, NmpcController, ReferenceWindow};
pub use planner::{OccupancyGrid, PlannedPath};
pub use sim::{MetricsReport, MissionLog, Scenario};
pub use slam::PoseGraph;
pub use solver::{SolveReport, Termination};
