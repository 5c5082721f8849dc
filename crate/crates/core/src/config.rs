//! The run configuration file: one TOML document tying together scenario
//! source, model parameters, planner settings and benchmark definition.
//! Every section is optional and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::DynamicsParams;
use crate::eval::{Approach, BenchSpec};
use crate::planner::{PlanConfig, SearchMode};
use crate::task::TaskConfig;
use crate::world3d::{generate_scenario, parse_toml, GenConfig, Scenario, WorldError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Where the single-scenario commands get their world from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSource {
    /// Scenario file, relative to the config file.
    pub path: Option<PathBuf>,
    /// Generator seed, used with the `[generator]` section.
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchBlock {
    pub first_seed: u64,
    pub episodes: usize,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub approaches: Vec<Approach>,
}

impl Default for BenchBlock {
    fn default() -> Self {
        Self {
            first_seed: 0,
            episodes: 100,
            workers: 0,
            approaches: vec![
                Approach {
                    label: "uniform".into(),
                    plan: PlanConfig { mode: SearchMode::Uniform, ..PlanConfig::default() },
                },
                Approach {
                    label: "optimistic".into(),
                    plan: PlanConfig { mode: SearchMode::Optimistic, ..PlanConfig::default() },
                },
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub dir: PathBuf,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: ScenarioSource,
    pub generator: GenConfig,
    pub dynamics: DynamicsParams,
    pub task: TaskConfig,
    pub plan: PlanConfig,
    pub bench: BenchBlock,
    pub output: OutputBlock,
}

impl RunConfig {
    /// Parses and validates; relative scenario paths are resolved against
    /// `base_dir`.
    pub fn from_toml_str(text: &str, origin: &Path, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = parse_toml(text, origin)?;
        if let Some(path) = &cfg.scenario.path {
            if path.is_relative() {
                cfg.scenario.path = Some(base_dir.join(path));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| WorldError::Io { path: path.to_owned(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, path, base)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        if self.scenario.path.is_some() && self.scenario.seed.is_some() {
            return Err(ConfigError::Invalid("[scenario] takes either path or seed, not both".into()));
        }
        if let Some(path) = &self.scenario.path {
            if !path.is_file() {
                return Err(ConfigError::Invalid(format!("scenario file {} does not exist", path.display())));
            }
        }
        self.generator.validate()?;
        self.dynamics.validate().map_err(|e| invalid(&e))?;
        self.task.validate().map_err(|e| invalid(&e))?;
        self.plan.validate().map_err(|e| invalid(&e))?;
        for approach in &self.bench.approaches {
            approach
                .plan
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("approach '{}': {e}", approach.label)))?;
        }
        Ok(())
    }

    /// The single scenario for `plan`: from file, or generated from the
    /// configured seed (0 when absent).
    pub fn resolve_scenario(&self) -> Result<Scenario, ConfigError> {
        match &self.scenario.path {
            Some(path) => Ok(Scenario::load(path)?),
            None => Ok(generate_scenario(self.scenario.seed.unwrap_or(0), &self.generator)?),
        }
    }

    pub fn bench_spec(&self) -> BenchSpec {
        BenchSpec {
            generator: self.generator.clone(),
            dynamics: self.dynamics,
            task: self.task,
            seeds: (0..self.bench.episodes as u64).map(|i| self.bench.first_seed + i).collect(),
            approaches: self.bench.approaches.clone(),
        }
    }
}
