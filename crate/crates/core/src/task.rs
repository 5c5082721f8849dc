//! Reward, episode status and the normalized observation vector.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{DynamicsParams, State};
use crate::world3d::World;

#[derive(Debug, Error, PartialEq)]
#[error("invalid task config: {0}")]
pub struct TaskConfigError(pub String);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    /// Surface distance below which reward is zero (m).
    pub obs_d: f64,
    /// Surface distance at which the obstacle factor saturates at 1 (m).
    pub delta_max: f64,
    pub goal_radius: f64,
    pub max_steps: usize,
    /// Obstacles reported in each observation.
    pub k_nearest: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self { obs_d: 1.0, delta_max: 1.0, goal_radius: 1.0, max_steps: 200, k_nearest: 5 }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<(), TaskConfigError> {
        if !(self.obs_d > 0.0 && self.obs_d <= self.delta_max && self.delta_max.is_finite()) {
            return Err(TaskConfigError(format!(
                "need 0 < obs_d <= delta_max, got obs_d={} delta_max={}",
                self.obs_d, self.delta_max
            )));
        }
        if !(self.goal_radius > 0.0 && self.goal_radius.is_finite()) {
            return Err(TaskConfigError(format!("goal_radius must be > 0, got {}", self.goal_radius)));
        }
        if self.max_steps == 0 {
            return Err(TaskConfigError("max_steps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn observation_len(&self) -> usize {
        6 + 4 * self.k_nearest
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    Running,
    ReachedGoal,
    Collided,
    TimedOut,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        self != Status::Running
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Running => "Running",
            Status::ReachedGoal => "ReachedGoal",
            Status::Collided => "Collided",
            Status::TimedOut => "TimedOut",
        })
    }
}

/// Obstacle factor of the reward from a precomputed surface distance.
#[inline]
pub fn obstacle_factor(surface_distance: f64, cfg: &TaskConfig) -> f64 {
    if surface_distance < cfg.obs_d {
        0.0
    } else {
        surface_distance.min(cfg.delta_max) / cfg.delta_max
    }
}

/// `δ / (1 + ‖p − goal‖)` with `δ ∈ [0, 1]`; depends on position only.
#[inline]
pub fn reward(x: &State, world: &World, cfg: &TaskConfig) -> f64 {
    reward_with_distance(x, world.surface_distance(&x.p), world, cfg)
}

#[inline]
pub(crate) fn reward_with_distance(x: &State, surface_distance: f64, world: &World, cfg: &TaskConfig) -> f64 {
    let delta = obstacle_factor(surface_distance, cfg);
    if delta == 0.0 {
        return 0.0;
    }
    delta / (1.0 + (x.p - world.goal()).norm())
}

/// Goal beats collision beats timeout.
pub fn status(x: &State, step: usize, world: &World, cfg: &TaskConfig) -> Status {
    if (x.p - world.goal()).norm() <= cfg.goal_radius {
        Status::ReachedGoal
    } else if world.surface_distance(&x.p) <= 0.0 {
        Status::Collided
    } else if step >= cfg.max_steps {
        Status::TimedOut
    } else {
        Status::Running
    }
}

/// Layout: goal offset over the world diagonal (3), velocity over the
/// terminal speed (3), then per nearest obstacle the unit direction to its
/// center (3) and its clamped surface distance over the diagonal (1).
/// Missing obstacles are padded with `(0, 0, 0, 1)`. Entries are clamped to
/// `[−1, 1]`.
pub fn observe(x: &State, world: &World, dynamics: &DynamicsParams, cfg: &TaskConfig) -> Vec<f64> {
    let diag = world.scenario.diagonal();
    let mut obs = Vec::with_capacity(cfg.observation_len());
    let to_goal = (world.goal() - x.p) / diag;
    obs.extend(to_goal.iter().map(|c| c.clamp(-1.0, 1.0)));
    for axis in 0..3 {
        let scaled = x.v[axis] * dynamics.theta[axis] / dynamics.beta;
        obs.push(scaled.clamp(-1.0, 1.0));
    }

    let mut ranked: Vec<(f64, usize)> =
        world.scenario.obstacles.iter().enumerate().map(|(i, o)| (o.surface_distance(&x.p), i)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    for slot in 0..cfg.k_nearest {
        match ranked.get(slot) {
            Some(&(distance, i)) => {
                let offset = world.scenario.obstacles[i].center - x.p;
                let norm = offset.norm();
                if norm > 0.0 {
                    obs.extend(offset.iter().map(|c| (c / norm).clamp(-1.0, 1.0)));
                } else {
                    obs.extend([0.0; 3]);
                }
                obs.push(distance.clamp(0.0, diag) / diag);
            }
            None => obs.extend([0.0, 0.0, 0.0, 1.0]),
        }
    }
    obs
}
