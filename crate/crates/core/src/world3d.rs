//! Sphere-obstacle worlds, seeded scenario generation, scenario files, and a
//! uniform-grid index for nearest obstacle-surface queries.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("generation infeasible: {0}")]
    GenerationInfeasible(String),
    #[error("{}: parse error at line {line}, column {column}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("scenario invariant violated: {0}")]
    InvariantViolation(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub center: Vector3<f64>,
    pub radius: f64,
}

impl Obstacle {
    /// Signed distance from `p` to the sphere surface (negative inside).
    #[inline]
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        (p - self.center).norm() - self.radius
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub bounds_min: Vector3<f64>,
    pub bounds_max: Vector3<f64>,
    pub start: Vector3<f64>,
    pub goal: Vector3<f64>,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

fn inside(p: &Vector3<f64>, lo: &Vector3<f64>, hi: &Vector3<f64>) -> bool {
    (0..3).all(|i| p[i] >= lo[i] && p[i] <= hi[i])
}

impl Scenario {
    pub fn diagonal(&self) -> f64 {
        (self.bounds_max - self.bounds_min).norm()
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        inside(p, &self.bounds_min, &self.bounds_max)
    }

    /// Structural invariants: ordered bounds, positive radii, centers, start
    /// and goal inside bounds, and start/goal outside every obstacle by at
    /// least `clearance`.
    pub fn validate(&self, clearance: f64) -> Result<(), WorldError> {
        let violation = |msg: String| Err(WorldError::InvariantViolation(msg));
        let finite = |v: &Vector3<f64>| v.iter().all(|c| c.is_finite());
        if ![&self.bounds_min, &self.bounds_max, &self.start, &self.goal].into_iter().all(finite) {
            return violation("non-finite coordinate".into());
        }
        if (0..3).any(|i| self.bounds_min[i] >= self.bounds_max[i]) {
            return violation("bounds_min must be < bounds_max componentwise".into());
        }
        if !self.contains(&self.start) {
            return violation("start lies outside bounds".into());
        }
        if !self.contains(&self.goal) {
            return violation("goal lies outside bounds".into());
        }
        for (i, obstacle) in self.obstacles.iter().enumerate() {
            if !(obstacle.radius > 0.0 && obstacle.radius.is_finite()) {
                return violation(format!("obstacles[{i}].radius must be > 0, got {}", obstacle.radius));
            }
            if !finite(&obstacle.center) || !self.contains(&obstacle.center) {
                return violation(format!("obstacles[{i}].center lies outside bounds"));
            }
            for (name, p) in [("start", &self.start), ("goal", &self.goal)] {
                let d = obstacle.surface_distance(p);
                if d < clearance {
                    return violation(format!(
                        "{name} is {d:.3} m from obstacles[{i}] surface, below clearance {clearance}"
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    /// Parses and validates a scenario document. `origin` is only used for
    /// diagnostics.
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, WorldError> {
        let scenario: Scenario = parse_toml(text, origin)?;
        scenario.validate(0.0)?;
        Ok(scenario)
    }

    pub fn save(&self, path: &Path) -> Result<(), WorldError> {
        std::fs::write(path, self.to_toml_string()).map_err(|source| WorldError::Io { path: path.to_owned(), source })
    }

    pub fn load(path: &Path) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path).map_err(|source| WorldError::Io { path: path.to_owned(), source })?;
        Self::from_toml_str(&text, path)
    }
}

/// Deserializes TOML, mapping errors to line/column diagnostics.
pub(crate) fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, origin: &Path) -> Result<T, WorldError> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|span| {
                let before = &text[..span.start.min(text.len())];
                let line = before.matches('\n').count() + 1;
                let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
                (line, column)
            })
            .unwrap_or((0, 0));
        WorldError::Parse { path: origin.to_owned(), line, column, message: e.message().to_owned() }
    })
}

/// Parameters of the random scenario generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub bounds_min: Vector3<f64>,
    pub bounds_max: Vector3<f64>,
    pub start: Vector3<f64>,
    pub n_obstacles: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Minimum surface distance from start and goal to any obstacle.
    pub clearance_margin: f64,
    pub min_goal_distance: f64,
    /// Rejection-sampling attempts per placed object.
    pub max_retries: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            bounds_min: Vector3::repeat(-10.0),
            bounds_max: Vector3::repeat(10.0),
            start: Vector3::zeros(),
            n_obstacles: 10,
            radius_min: 0.5,
            radius_max: 1.5,
            clearance_margin: 2.0,
            min_goal_distance: 10.0,
            max_retries: 1000,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |msg: &str| Err(WorldError::InvalidConfig(msg.to_owned()));
        if (0..3).any(|i| {
            self.bounds_min[i] >= self.bounds_max[i] || self.bounds_min[i].is_nan() || self.bounds_max[i].is_nan()
        }) {
            return bad("bounds_min must be < bounds_max componentwise");
        }
        if !inside(&self.start, &self.bounds_min, &self.bounds_max) {
            return bad("start must lie inside bounds");
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max && self.radius_max.is_finite()) {
            return bad("radius range must satisfy 0 < radius_min <= radius_max");
        }
        if !(self.clearance_margin >= 0.0 && self.clearance_margin.is_finite()) {
            return bad("clearance_margin must be >= 0");
        }
        if !(self.min_goal_distance >= 0.0 && self.min_goal_distance.is_finite()) {
            return bad("min_goal_distance must be >= 0");
        }
        if self.max_retries == 0 {
            return bad("max_retries must be >= 1");
        }
        Ok(())
    }

    fn sample_point(&self, rng: &mut SplitMix64) -> Vector3<f64> {
        Vector3::from_fn(|i, _| rng.uniform(self.bounds_min[i], self.bounds_max[i]))
    }
}

/// Draws a scenario by rejection sampling. The draw order is: goal
/// coordinates (x, y, z) until the goal is at least `min_goal_distance` from
/// the start, then for each obstacle its center (x, y, z) followed by its
/// radius, redrawn until both start and goal keep `clearance_margin`.
pub fn generate_scenario(seed: u64, cfg: &GenConfig) -> Result<Scenario, WorldError> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(seed);

    let goal = (0..cfg.max_retries)
        .map(|_| cfg.sample_point(&mut rng))
        .find(|g| (g - cfg.start).norm() >= cfg.min_goal_distance)
        .ok_or_else(|| {
            WorldError::GenerationInfeasible(format!(
                "no goal at min_goal_distance {} m from start within bounds after {} retries",
                cfg.min_goal_distance, cfg.max_retries
            ))
        })?;

    let mut obstacles = Vec::with_capacity(cfg.n_obstacles);
    for i in 0..cfg.n_obstacles {
        let placed = (0..cfg.max_retries)
            .map(|_| {
                let center = cfg.sample_point(&mut rng);
                let radius = rng.uniform(cfg.radius_min, cfg.radius_max);
                Obstacle { center, radius }
            })
            .find(|o| {
                o.surface_distance(&cfg.start) >= cfg.clearance_margin
                    && o.surface_distance(&goal) >= cfg.clearance_margin
            })
            .ok_or_else(|| {
                WorldError::GenerationInfeasible(format!(
                    "could not place obstacle {i} with clearance_margin {} m from start and goal after {} retries",
                    cfg.clearance_margin, cfg.max_retries
                ))
            })?;
        obstacles.push(placed);
    }

    let scenario =
        Scenario { seed, bounds_min: cfg.bounds_min, bounds_max: cfg.bounds_max, start: cfg.start, goal, obstacles };
    debug_assert!(scenario.validate(cfg.clearance_margin).is_ok());
    Ok(scenario)
}

/// Closest obstacle to a query point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nearest {
    pub index: usize,
    pub distance: f64,
}

#[inline]
fn closer(candidate: Nearest, best: Option<Nearest>) -> bool {
    match best {
        None => true,
        Some(b) => candidate.distance < b.distance || (candidate.distance == b.distance && candidate.index < b.index),
    }
}

/// Linear scan over all obstacles; ties go to the lowest index.
pub fn brute_force_nearest(obstacles: &[Obstacle], p: &Vector3<f64>) -> Option<Nearest> {
    let mut best = None;
    for (index, obstacle) in obstacles.iter().enumerate() {
        let candidate = Nearest { index, distance: obstacle.surface_distance(p) };
        if closer(candidate, best) {
            best = Some(candidate);
        }
    }
    best
}

/// Worlds this small are scanned directly; the ring walk costs more.
const LINEAR_SCAN_MAX: usize = 8;

/// Uniform grid over the scenario bounds padded by the largest radius. Each
/// cell lists every obstacle whose sphere touches it.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    origin: Vector3<f64>,
    cell_size: f64,
    dims: [i64; 3],
    cells: Vec<Vec<u32>>,
    obstacles: Vec<Obstacle>,
}

impl SpatialIndex {
    /// Builds with cell size equal to the largest obstacle diameter.
    pub fn build(scenario: &Scenario) -> Self {
        let max_radius = scenario.obstacles.iter().map(|o| o.radius).fold(0.0, f64::max);
        let cell_size = if max_radius > 0.0 { 2.0 * max_radius } else { scenario.diagonal() };
        Self::with_cell_size(scenario, cell_size)
    }

    pub fn with_cell_size(scenario: &Scenario, cell_size: f64) -> Self {
        assert!(cell_size > 0.0 && cell_size.is_finite(), "cell_size must be positive");
        let pad = scenario.obstacles.iter().map(|o| o.radius).fold(0.0, f64::max);
        let origin = scenario.bounds_min.add_scalar(-pad);
        let extent = scenario.bounds_max.add_scalar(pad) - origin;
        let dims = [0, 1, 2].map(|i| ((extent[i] / cell_size).ceil() as i64).max(1));
        let mut index = Self {
            origin,
            cell_size,
            dims,
            cells: vec![Vec::new(); (dims[0] * dims[1] * dims[2]) as usize],
            obstacles: scenario.obstacles.clone(),
        };
        for (id, obstacle) in scenario.obstacles.iter().enumerate() {
            index.register(id as u32, obstacle);
        }
        index
    }

    fn register(&mut self, id: u32, obstacle: &Obstacle) {
        // Slight inflation so rounding never drops a touching cell.
        let reach = obstacle.radius * (1.0 + 1e-9) + 1e-12;
        let lo = self.cell_of(&obstacle.center.add_scalar(-reach)).map(|c| c.max(0));
        let hi = [0, 1, 2].map(|i| self.cell_of(&obstacle.center.add_scalar(reach))[i].min(self.dims[i] - 1));
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    let cell_lo = self.origin + Vector3::new(i as f64, j as f64, k as f64) * self.cell_size;
                    let cell_hi = cell_lo.add_scalar(self.cell_size);
                    let nearest = Vector3::from_fn(|a, _| obstacle.center[a].clamp(cell_lo[a], cell_hi[a]));
                    if (nearest - obstacle.center).norm_squared() <= reach * reach {
                        let flat = self.flat([i, j, k]);
                        self.cells[flat].push(id);
                    }
                }
            }
        }
    }

    #[inline]
    fn cell_of(&self, p: &Vector3<f64>) -> [i64; 3] {
        [0, 1, 2].map(|i| ((p[i] - self.origin[i]) / self.cell_size).floor() as i64)
    }

    #[inline]
    fn flat(&self, c: [i64; 3]) -> usize {
        ((c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]) as usize
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    /// Obstacle ids registered in the cell containing `p`, if inside the grid.
    pub fn cell_contents(&self, p: &Vector3<f64>) -> Option<&[u32]> {
        let c = self.cell_of(p);
        (0..3).all(|i| c[i] >= 0 && c[i] < self.dims[i]).then(|| self.cells[self.flat(c)].as_slice())
    }

    /// Exact nearest obstacle, lowest index among ties.
    pub fn nearest(&self, p: &Vector3<f64>) -> Option<Nearest> {
        if self.obstacles.len() <= LINEAR_SCAN_MAX {
            brute_force_nearest(&self.obstacles, p)
        } else {
            self.ring_search(p)
        }
    }

    /// Grid query: expands Chebyshev rings of cells around `p` until the
    /// closest candidate cannot be beaten by anything in unvisited cells.
    pub fn ring_search(&self, p: &Vector3<f64>) -> Option<Nearest> {
        if self.obstacles.is_empty() {
            return None;
        }
        let center = self.cell_of(p);
        // First ring that touches the grid at all.
        let first = (0..3).map(|i| (-center[i]).max(center[i] - (self.dims[i] - 1)).max(0)).max().unwrap_or(0);
        let mut best: Option<Nearest> = None;
        let mut ring = first;
        loop {
            self.scan_ring(p, center, ring, &mut best);
            let covers_grid = (0..3).all(|i| center[i] - ring <= 0 && center[i] + ring >= self.dims[i] - 1);
            if covers_grid {
                return best;
            }
            if let Some(b) = best {
                let clearance = (0..3)
                    .map(|i| {
                        let lo = self.origin[i] + (center[i] - ring) as f64 * self.cell_size;
                        let hi = self.origin[i] + (center[i] + ring + 1) as f64 * self.cell_size;
                        (p[i] - lo).min(hi - p[i])
                    })
                    .fold(f64::INFINITY, f64::min);
                if b.distance <= clearance {
                    return best;
                }
            }
            ring += 1;
        }
    }

    fn scan_ring(&self, p: &Vector3<f64>, center: [i64; 3], ring: i64, best: &mut Option<Nearest>) {
        let lo = [0, 1, 2].map(|i| (center[i] - ring).max(0));
        let hi = [0, 1, 2].map(|i| (center[i] + ring).min(self.dims[i] - 1));
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                let on_shell_ij = (i - center[0]).abs() == ring || (j - center[1]).abs() == ring;
                for k in lo[2]..=hi[2] {
                    if !on_shell_ij && (k - center[2]).abs() != ring {
                        continue;
                    }
                    for &id in &self.cells[self.flat([i, j, k])] {
                        let index = id as usize;
                        let candidate = Nearest { index, distance: self.obstacles[index].surface_distance(p) };
                        if closer(candidate, *best) {
                            *best = Some(candidate);
                        }
                    }
                }
            }
        }
    }

    /// Signed distance to the nearest obstacle surface; `+∞` with no
    /// obstacles.
    pub fn nearest_surface_distance(&self, p: &Vector3<f64>) -> f64 {
        self.nearest(p).map_or(f64::INFINITY, |n| n.distance)
    }
}

/// A scenario together with its distance index; immutable and shareable.
#[derive(Clone, Debug)]
pub struct World {
    pub scenario: Scenario,
    pub index: SpatialIndex,
}

impl World {
    pub fn new(scenario: Scenario) -> Self {
        let index = SpatialIndex::build(&scenario);
        Self { scenario, index }
    }

    #[inline]
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        self.index.nearest_surface_distance(p)
    }

    pub fn goal(&self) -> &Vector3<f64> {
        &self.scenario.goal
    }
}
