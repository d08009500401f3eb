//! Event-triggered robust MPC with constraint tightening and hyper-rectangular
//! triggering sets.

pub mod config;
pub mod geometry;
pub mod rmpc;
pub mod sim;
pub mod solver;
pub mod tightening;
pub mod trigger;

pub use config::{ConfigError, ExperimentConfig};
pub use geometry::{shape_ratio, GeometryError, HyperRect, Polytope};
pub use nalgebra::{DMatrix, DVector};
pub use rmpc::{solve_rmpc, MpcSolution, RmpcError};
pub use sim::{
    run_closed_loop, sequence_digest, trigger_statistics, DisturbanceKind, DisturbanceModel, Impulse, Method,
    SimError, SimTrace, TriggerCause, TriggerStatistics,
};
pub use tightening::{PlantModel, RmpcSetup, SetupReport, TighteningError};
pub use trigger::{build_schedule, BoxMethod, TriggerError, TriggerSchedule};
