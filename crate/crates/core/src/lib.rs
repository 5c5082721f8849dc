//! Deterministic look-ahead tree planning for a point mass flying through a
//! field of sphere obstacles.
//!
//! * [`world3d`]: scenarios, seeded generation, nearest-surface queries.
//! * [`dynamics`]: exact discrete-time point mass with friction.
//! * [`task`]: reward, episode status and observations.
//! * [`planner`]: uniform and optimistic look-ahead trees, receding-horizon
//!   execution.
//! * [`eval`]: exhaustive value oracles, regret, robust return, benchmarks.
//! * [`bridge`]: line-delimited environment server for external agents.
//! * [`config`]: the run configuration file.

pub mod bridge;
pub mod config;
pub mod dynamics;
pub mod eval;
pub mod planner;
pub mod rng;
pub mod task;
pub mod world3d;

pub use dynamics::{Action, DynamicsParams, State, NUM_ACTIONS};
pub use planner::{plan, replan_horizon, Model, PlanConfig, PlanResult, SearchMode};
pub use task::{Status, TaskConfig};
pub use world3d::{generate_scenario, GenConfig, Obstacle, Scenario, SpatialIndex, World};
