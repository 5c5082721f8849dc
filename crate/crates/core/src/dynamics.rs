//! Point mass with per-axis viscous friction.
//!
//! Continuous model, per axis `μ ∈ {x, y, z}`:
//!
//! ```text
//! ṗ = v
//! v̇ = −θ_μ v + β u_μ
//! ```
//!
//! The axes are decoupled, so the matrix exponential has a closed form per
//! axis. With `h = θ dt`, `φ1(h) = (1 − e^−h)/h` and
//! `φ2(h) = (e^−h − 1 + h)/h²`:
//!
//! ```text
//! v' = v e^−h + β u dt φ1(h)
//! p' = p + v dt φ1(h) + β u dt² φ2(h)
//! ```
//!
//! Both `φ` functions tend to `1` and `1/2` as `h → 0`, which recovers the
//! frictionless double integrator.

use nalgebra::{Matrix6, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of discrete actions.
pub const NUM_ACTIONS: usize = 7;

const ACTION_VECTORS: [[f64; 3]; NUM_ACTIONS] = [
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, 0.0, -1.0],
];

/// Index into the fixed action list: null, +x, −x, +y, −y, +z, −z.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Action(u8);

impl Action {
    pub const NULL: Action = Action(0);

    pub const ALL: [Action; NUM_ACTIONS] =
        [Action(0), Action(1), Action(2), Action(3), Action(4), Action(5), Action(6)];

    pub fn from_index(index: usize) -> Option<Action> {
        (index < NUM_ACTIONS).then_some(Action(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Unit control direction `u ∈ {−1, 0, 1}³`.
    pub fn vector(self) -> Vector3<f64> {
        Vector3::from(ACTION_VECTORS[self.index()])
    }
}

impl TryFrom<usize> for Action {
    type Error = DynamicsError;

    fn try_from(index: usize) -> Result<Self, Self::Error> {
        Action::from_index(index).ok_or(DynamicsError::InvalidAction(index))
    }
}

impl From<Action> for usize {
    fn from(action: Action) -> usize {
        action.index()
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("action id {0} out of range 0..{NUM_ACTIONS}")]
    InvalidAction(usize),
    #[error("invalid dynamics parameter: {0}")]
    InvalidParams(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl State {
    pub fn new(p: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { p, v }
    }

    pub fn at_rest(p: Vector3<f64>) -> Self {
        Self { p, v: Vector3::zeros() }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).all(|c| c.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsParams {
    /// Friction coefficients per axis (1/s).
    pub theta: Vector3<f64>,
    /// Control scaling in `(0, 1]`.
    pub beta: f64,
    /// Control period (s).
    pub dt: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self { theta: Vector3::new(0.25, 0.25, 0.25), beta: 1.0, dt: 0.2 }
    }
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.theta.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(DynamicsError::InvalidParams(format!(
                "theta must be finite and >= 0, got {:?}",
                self.theta.as_slice()
            )));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(DynamicsError::InvalidParams(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(DynamicsError::InvalidParams(format!("dt must be > 0, got {}", self.dt)));
        }
        Ok(())
    }

    /// Steady-state speed `β/θ_μ` reached under a constant unit action.
    /// Infinite on frictionless axes.
    pub fn terminal_speed(&self) -> Vector3<f64> {
        self.theta.map(|t| self.beta / t)
    }
}

// Below this h the series is used; truncation error is O(h^5).
const SERIES_SWITCH: f64 = 1e-3;

/// Returns `(e^−h, φ1(h), φ2(h))`.
fn propagators(h: f64) -> (f64, f64, f64) {
    let decay = (-h).exp();
    if h < SERIES_SWITCH {
        let phi1 = 1.0 - h / 2.0 + h * h / 6.0 - h * h * h / 24.0 + h * h * h * h / 120.0;
        let phi2 = 0.5 - h / 6.0 + h * h / 24.0 - h * h * h / 120.0 + h * h * h * h / 720.0;
        (decay, phi1, phi2)
    } else {
        let one_minus = -(-h).exp_m1();
        let phi1 = one_minus / h;
        let phi2 = (h - one_minus) / (h * h);
        (decay, phi1, phi2)
    }
}

/// Exact one-period transition under a held action.
pub fn step(x: &State, action: Action, params: &DynamicsParams) -> State {
    params.discretize().step(x, action)
}

/// Exact transition over an arbitrary duration `dt`.
pub fn step_for(x: &State, action: Action, params: &DynamicsParams, dt: f64) -> State {
    Discretization::new(params, dt).step(x, action)
}

/// Per-axis propagator coefficients for a fixed period, so repeated steps
/// skip the exponentials.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Discretization {
    decay: Vector3<f64>,
    /// `dt φ1`: velocity-to-position gain and control-to-velocity gain.
    gain1: Vector3<f64>,
    /// `dt² φ2`: control-to-position gain.
    gain2: Vector3<f64>,
    beta: f64,
}

impl Discretization {
    pub fn new(params: &DynamicsParams, dt: f64) -> Self {
        let mut d =
            Self { decay: Vector3::zeros(), gain1: Vector3::zeros(), gain2: Vector3::zeros(), beta: params.beta };
        for axis in 0..3 {
            let (decay, phi1, phi2) = propagators(params.theta[axis] * dt);
            d.decay[axis] = decay;
            d.gain1[axis] = dt * phi1;
            d.gain2[axis] = dt * dt * phi2;
        }
        d
    }

    #[inline]
    pub fn step(&self, x: &State, action: Action) -> State {
        let u = action.vector() * self.beta;
        State {
            p: x.p + x.v.component_mul(&self.gain1) + u.component_mul(&self.gain2),
            v: x.v.component_mul(&self.decay) + u.component_mul(&self.gain1),
        }
    }
}

impl DynamicsParams {
    pub fn discretize(&self) -> Discretization {
        Discretization::new(self, self.dt)
    }
}

/// Friction-free part of the state matrix: position rows pick up velocity.
pub fn nominal_matrix() -> Matrix6<f64> {
    let mut a = Matrix6::zeros();
    for axis in 0..3 {
        a[(axis, axis + 3)] = 1.0;
    }
    a
}

/// Direction `Φ_i` along which `θ_i` enters the state matrix.
pub fn friction_direction(axis: usize) -> Matrix6<f64> {
    let mut phi = Matrix6::zeros();
    phi[(axis + 3, axis + 3)] = -1.0;
    phi
}

/// `A(θ) = A₀ + Σ θ_i Φ_i`, the continuous-time state matrix for state
/// ordering `[px py pz vx vy vz]`.
pub fn state_matrix(theta: &Vector3<f64>) -> Matrix6<f64> {
    (0..3).fold(nominal_matrix(), |a, i| a + friction_direction(i) * theta[i])
}
