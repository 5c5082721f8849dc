//! Ground-truth oracles and experiment metrics.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{Action, DynamicsParams, State, NUM_ACTIONS};
use crate::planner::{self, Model, PlanConfig, PlanError, SearchMode};
use crate::task::{Status, TaskConfig};
use crate::world3d::{generate_scenario, GenConfig, World};

/// Largest tree the exhaustive oracle will enumerate.
pub const MAX_ORACLE_LEAVES: u64 = 10_000_000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("exhaustive search of depth {depth} needs {leaves} leaves, above the limit of {MAX_ORACLE_LEAVES}")]
    BudgetExceeded { depth: u32, leaves: u64 },
    #[error("oracle depth must be >= 1")]
    ZeroDepth,
    #[error("robust return needs at least one {0}")]
    Empty(&'static str),
    #[error("approach '{label}': {source}")]
    Approach {
        label: String,
        #[source]
        source: PlanError,
    },
    #[error("benchmark needs at least one episode and one approach")]
    EmptyBenchmark,
    #[error("invalid benchmark config: {0}")]
    InvalidConfig(String),
}

fn value(model: &Model<'_>, x: &State, depth: u32, gamma: f64) -> f64 {
    if depth == 0 {
        return 0.0;
    }
    Action::ALL
        .iter()
        .map(|&a| {
            let (next, reward, _) = model.transition(x, a);
            reward + gamma * value(model, &next, depth - 1, gamma)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Depth-`depth` truncated optimal action values by full enumeration:
/// `Q_D(x, a) = r(f(x, a)) + γ max_b Q_{D−1}(f(x, a), b)`, `Q_0 = 0`.
/// No pruning; the reward model is evaluated everywhere.
pub fn exhaustive_q(x: &State, depth: u32, model: Model<'_>, gamma: f64) -> Result<[f64; NUM_ACTIONS], EvalError> {
    if depth == 0 {
        return Err(EvalError::ZeroDepth);
    }
    let leaves = (NUM_ACTIONS as u64).checked_pow(depth).unwrap_or(u64::MAX);
    if leaves > MAX_ORACLE_LEAVES {
        return Err(EvalError::BudgetExceeded { depth, leaves });
    }
    let mut q = [0.0; NUM_ACTIONS];
    for (slot, &a) in q.iter_mut().zip(Action::ALL.iter()) {
        let (next, reward, _) = model.transition(x, a);
        *slot = reward + gamma * value(&model, &next, depth - 1, gamma);
    }
    Ok(q)
}

/// `max_a Q_D(x, a) − Q_D(x, chosen)`.
pub fn regret_of_action(x: &State, chosen: Action, depth: u32, model: Model<'_>, gamma: f64) -> Result<f64, EvalError> {
    let q = exhaustive_q(x, depth, model, gamma)?;
    Ok(regret_from_q(&q, chosen))
}

pub fn regret_from_q(q: &[f64; NUM_ACTIONS], chosen: Action) -> f64 {
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    best - q[chosen.index()]
}

/// Discounted return of an open-loop action sequence, rewarding each
/// arrival state: `Σ_n γ^n r(x_{n+1})`.
pub fn open_loop_return(x0: &State, actions: &[Action], model: Model<'_>, gamma: f64) -> f64 {
    let mut x = *x0;
    let mut discount = 1.0;
    let mut total = 0.0;
    for &a in actions {
        let (next, reward, _) = model.transition(&x, a);
        total += discount * reward;
        discount *= gamma;
        x = next;
    }
    total
}

/// Worst case of [`open_loop_return`] over friction candidates; every other
/// dynamics parameter is taken from `base`.
pub fn robust_return(
    x0: &State,
    actions: &[Action],
    theta_candidates: &[Vector3<f64>],
    base: &DynamicsParams,
    world: &World,
    task: &TaskConfig,
    gamma: f64,
) -> Result<f64, EvalError> {
    if actions.is_empty() {
        return Err(EvalError::Empty("action"));
    }
    if theta_candidates.is_empty() {
        return Err(EvalError::Empty("theta candidate"));
    }
    Ok(theta_candidates
        .iter()
        .map(|theta| {
            let dynamics = DynamicsParams { theta: *theta, ..*base };
            open_loop_return(x0, actions, Model::new(world, &dynamics, task), gamma)
        })
        .fold(f64::INFINITY, f64::min))
}

/// A named planner configuration compared in a benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "ApproachDoc", into = "ApproachDoc")]
pub struct Approach {
    pub label: String,
    pub plan: PlanConfig,
}

/// Flat file form of [`Approach`]: the label next to the plan keys.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ApproachDoc {
    label: String,
    #[serde(default = "default_gamma")]
    gamma: f64,
    #[serde(default = "default_budget")]
    budget: usize,
    #[serde(default = "default_mode")]
    mode: SearchMode,
    #[serde(default = "default_prune")]
    prune_collisions: bool,
}

fn default_gamma() -> f64 {
    PlanConfig::default().gamma
}

fn default_budget() -> usize {
    PlanConfig::default().budget
}

fn default_mode() -> SearchMode {
    PlanConfig::default().mode
}

fn default_prune() -> bool {
    PlanConfig::default().prune_collisions
}

impl From<ApproachDoc> for Approach {
    fn from(doc: ApproachDoc) -> Self {
        Approach {
            label: doc.label,
            plan: PlanConfig {
                gamma: doc.gamma,
                budget: doc.budget,
                mode: doc.mode,
                prune_collisions: doc.prune_collisions,
            },
        }
    }
}

impl From<Approach> for ApproachDoc {
    fn from(a: Approach) -> Self {
        ApproachDoc {
            label: a.label,
            gamma: a.plan.gamma,
            budget: a.plan.budget,
            mode: a.plan.mode,
            prune_collisions: a.plan.prune_collisions,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub generator: GenConfig,
    pub dynamics: DynamicsParams,
    pub task: TaskConfig,
    pub seeds: Vec<u64>,
    pub approaches: Vec<Approach>,
}

impl BenchSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.seeds.is_empty() || self.approaches.is_empty() {
            return Err(EvalError::EmptyBenchmark);
        }
        for approach in &self.approaches {
            approach.plan.validate().map_err(|source| EvalError::Approach { label: approach.label.clone(), source })?;
        }
        self.generator.validate().map_err(|e| EvalError::InvalidConfig(e.to_string()))?;
        self.dynamics.validate().map_err(|e| EvalError::InvalidConfig(e.to_string()))?;
        self.task.validate().map_err(|e| EvalError::InvalidConfig(e.to_string()))?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    ReachedGoal,
    Collided,
    TimedOut,
    /// The episode could not run, e.g. its scenario failed to generate.
    Failed,
}

impl From<Status> for Outcome {
    fn from(status: Status) -> Self {
        match status {
            Status::ReachedGoal => Outcome::ReachedGoal,
            Status::Collided => Outcome::Collided,
            // Running cannot leave the receding-horizon loop.
            Status::TimedOut | Status::Running => Outcome::TimedOut,
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub approach: String,
    pub seed: u64,
    pub outcome: Outcome,
    pub steps: usize,
    pub total_discounted_reward: f64,
    /// Planning seconds per decision.
    pub mean_plan_time: f64,
    pub actions: Vec<Action>,
    pub path: Vec<Vector3<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EpisodeResult {
    /// Equality on everything except timing.
    pub fn same_behaviour(&self, other: &Self) -> bool {
        EpisodeResult { mean_plan_time: 0.0, ..self.clone() } == EpisodeResult { mean_plan_time: 0.0, ..other.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub approach: String,
    pub mean_execution_time: f64,
    pub success_fraction: f64,
    pub episodes: usize,
    pub successes: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub const CSV_HEADER: &'static str = "approach,mean_execution_time_s,success_fraction,episodes,successes";

    /// Rows follow the order of `labels`; episodes may arrive in any order.
    pub fn aggregate(labels: &[String], episodes: &[EpisodeResult]) -> Self {
        let rows = labels
            .iter()
            .map(|label| {
                let mine: Vec<&EpisodeResult> = episodes.iter().filter(|e| &e.approach == label).collect();
                let successes = mine.iter().filter(|e| e.outcome == Outcome::ReachedGoal).count();
                let n = mine.len();
                // Sort the timings so the mean does not depend on arrival order.
                let mut times: Vec<f64> = mine.iter().map(|e| e.mean_plan_time).collect();
                times.sort_by(f64::total_cmp);
                BenchRow {
                    approach: label.clone(),
                    mean_execution_time: if n == 0 { 0.0 } else { times.iter().sum::<f64>() / n as f64 },
                    success_fraction: if n == 0 { 0.0 } else { successes as f64 / n as f64 },
                    episodes: n,
                    successes,
                }
            })
            .collect();
        BenchTable { rows }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{},{}\n",
                csv_field(&row.approach),
                row.mean_execution_time,
                row.success_fraction,
                row.episodes,
                row.successes
            ));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Episode records, one JSON object per line.
pub fn episodes_to_jsonl(episodes: &[EpisodeResult]) -> String {
    episodes.iter().map(|e| serde_json::to_string(e).expect("episode serializes") + "\n").collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub table: BenchTable,
    pub episodes: Vec<EpisodeResult>,
}

/// Runs one receding-horizon episode on the scenario generated from `seed`.
pub fn run_episode(seed: u64, approach: &Approach, spec: &BenchSpec) -> EpisodeResult {
    let failed = |error: String| EpisodeResult {
        approach: approach.label.clone(),
        seed,
        outcome: Outcome::Failed,
        steps: 0,
        total_discounted_reward: 0.0,
        mean_plan_time: 0.0,
        actions: Vec::new(),
        path: Vec::new(),
        error: Some(error),
    };
    let scenario = match generate_scenario(seed, &spec.generator) {
        Ok(s) => s,
        Err(e) => return failed(e.to_string()),
    };
    let world = World::new(scenario);
    let model = Model::new(&world, &spec.dynamics, &spec.task);
    let x0 = State::at_rest(world.scenario.start);
    let rollout = match planner::replan_horizon(&x0, model, &approach.plan, spec.task.max_steps) {
        Ok(r) => r,
        Err(e) => return failed(e.to_string()),
    };
    let steps = rollout.transitions.len();
    let mut path: Vec<Vector3<f64>> = rollout.transitions.iter().map(|t| t.state.p).collect();
    path.push(rollout.final_state.p);
    EpisodeResult {
        approach: approach.label.clone(),
        seed,
        outcome: rollout.outcome.into(),
        steps,
        total_discounted_reward: rollout.discounted_return(approach.plan.gamma),
        mean_plan_time: if steps == 0 { 0.0 } else { (rollout.total_plan_time() / steps as u32).as_secs_f64() },
        actions: rollout.actions(),
        path,
        error: None,
    }
}

/// How episodes are scheduled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Serial,
    /// Global work-stealing pool. Runs serially when the `parallel` feature
    /// is off.
    #[default]
    Parallel,
    /// Dedicated pool with this many workers.
    ParallelWith(usize),
}

/// Runs every (approach, seed) pair and aggregates per approach. Episode
/// order in the report is approach-major, then seed order, regardless of
/// scheduling.
pub fn benchmark(spec: &BenchSpec, execution: Execution) -> Result<BenchReport, EvalError> {
    spec.validate()?;
    let jobs: Vec<(&Approach, u64)> =
        spec.approaches.iter().flat_map(|a| spec.seeds.iter().map(move |&s| (a, s))).collect();
    let episodes = run_jobs(&jobs, spec, execution);
    let labels: Vec<String> = spec.approaches.iter().map(|a| a.label.clone()).collect();
    Ok(BenchReport { table: BenchTable::aggregate(&labels, &episodes), episodes })
}

fn run_jobs(jobs: &[(&Approach, u64)], spec: &BenchSpec, execution: Execution) -> Vec<EpisodeResult> {
    let serial = || jobs.iter().map(|(a, s)| run_episode(*s, a, spec)).collect();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let parallel = || jobs.par_iter().map(|(a, s)| run_episode(*s, a, spec)).collect();
        match execution {
            Execution::Serial => serial(),
            Execution::Parallel => parallel(),
            Execution::ParallelWith(workers) => rayon::ThreadPoolBuilder::new()
                .num_threads(workers.max(1))
                .build()
                .expect("failed to build rayon thread pool")
                .install(parallel),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = execution;
        serial()
    }
}
