//! Look-ahead tree search over the deterministic point-mass model.
//!
//! Every node carries two bounds on the best discounted return reachable
//! through it. With rewards in `[0, 1]`:
//!
//! * `u` is the discounted reward collected from the root down to the node,
//!   a lower bound;
//! * `b = u + γ^depth / (1 − γ)` adds the largest reward stream that could
//!   still follow, an upper bound.
//!
//! Uniform search expands the shallowest leaf (breadth first). Optimistic
//! search expands the leaf with the largest `b`. Both return the root action
//! whose subtree holds the largest `u`; uniform search only counts nodes in
//! its completed layers, so a partially expanded layer cannot favour the
//! root actions that breadth-first order happens to reach first.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{Action, Discretization, DynamicsParams, State, NUM_ACTIONS};
use crate::task::{self, Status, TaskConfig};
use crate::world3d::World;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("invalid plan config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    Uniform,
    Optimistic,
}

impl std::str::FromStr for SearchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(SearchMode::Uniform),
            "optimistic" => Ok(SearchMode::Optimistic),
            other => Err(format!("unknown mode '{other}', expected uniform|optimistic")),
        }
    }
}

impl std::fmt::Display for SearchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SearchMode::Uniform => "uniform",
            SearchMode::Optimistic => "optimistic",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    pub gamma: f64,
    /// Node expansions per decision.
    pub budget: usize,
    pub mode: SearchMode,
    /// Stop expanding below states closer than `obs_d` to an obstacle.
    pub prune_collisions: bool,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self { gamma: 0.9, budget: 1000, mode: SearchMode::Optimistic, prune_collisions: true }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(PlanError::InvalidConfig(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if self.budget == 0 {
            return Err(PlanError::InvalidConfig("budget must be >= 1".into()));
        }
        Ok(())
    }
}

/// The generative model the planner queries: world, dynamics and task.
#[derive(Clone, Copy, Debug)]
pub struct Model<'a> {
    pub world: &'a World,
    pub dynamics: &'a DynamicsParams,
    pub task: &'a TaskConfig,
    stepper: Discretization,
}

impl<'a> Model<'a> {
    pub fn new(world: &'a World, dynamics: &'a DynamicsParams, task: &'a TaskConfig) -> Self {
        Self { world, dynamics, task, stepper: dynamics.discretize() }
    }

    /// Next state, arrival reward and the next state's surface distance.
    #[inline]
    pub fn transition(&self, x: &State, action: Action) -> (State, f64, f64) {
        let next = self.stepper.step(x, action);
        let distance = self.world.surface_distance(&next.p);
        let reward = task::reward_with_distance(&next, distance, self.world, self.task);
        (next, reward, distance)
    }
}

#[derive(Clone, Debug)]
pub struct TreeNode {
    pub state: State,
    pub depth: u32,
    pub parent: Option<u32>,
    pub action: Option<Action>,
    pub reward: f64,
    pub u: f64,
    pub b: f64,
    /// Index of the first of `NUM_ACTIONS` consecutive children.
    pub children: Option<u32>,
    pub terminal: bool,
}

impl TreeNode {
    pub fn is_expanded(&self) -> bool {
        self.children.is_some()
    }
}

#[derive(Clone, Copy, Debug)]
struct OptimisticKey {
    b: f64,
    depth: u32,
    id: u32,
}

impl PartialEq for OptimisticKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OptimisticKey {}

impl PartialOrd for OptimisticKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OptimisticKey {
    // Max-heap order: larger b, then shallower, then earlier insertion.
    fn cmp(&self, other: &Self) -> Ordering {
        self.b.total_cmp(&other.b).then_with(|| other.depth.cmp(&self.depth)).then_with(|| other.id.cmp(&self.id))
    }
}

#[derive(Clone, Debug)]
enum Frontier {
    Fifo(VecDeque<u32>),
    Optimistic(BinaryHeap<OptimisticKey>),
}

impl Frontier {
    fn new(mode: SearchMode) -> Self {
        match mode {
            SearchMode::Uniform => Frontier::Fifo(VecDeque::new()),
            SearchMode::Optimistic => Frontier::Optimistic(BinaryHeap::new()),
        }
    }

    fn push(&mut self, id: u32, node: &TreeNode) {
        match self {
            Frontier::Fifo(queue) => queue.push_back(id),
            Frontier::Optimistic(heap) => heap.push(OptimisticKey { b: node.b, depth: node.depth, id }),
        }
    }

    fn pop(&mut self) -> Option<u32> {
        match self {
            Frontier::Fifo(queue) => queue.pop_front(),
            Frontier::Optimistic(heap) => heap.pop().map(|k| k.id),
        }
    }

    fn len(&self) -> usize {
        match self {
            Frontier::Fifo(queue) => queue.len(),
            Frontier::Optimistic(heap) => heap.len(),
        }
    }
}

/// An incrementally grown look-ahead tree. Node 0 is the root.
#[derive(Clone, Debug)]
pub struct PlanTree<'a> {
    model: Model<'a>,
    gamma: f64,
    prune: bool,
    nodes: Vec<TreeNode>,
    frontier: Frontier,
    expansions: usize,
    deepest_expanded: u32,
    /// Largest `u` below each root action, per node depth.
    best_by_depth: Vec<[f64; NUM_ACTIONS]>,
}

impl<'a> PlanTree<'a> {
    pub fn new(root: State, model: Model<'a>, cfg: &PlanConfig) -> Result<Self, PlanError> {
        cfg.validate()?;
        let root = TreeNode {
            state: root,
            depth: 0,
            parent: None,
            action: None,
            reward: 0.0,
            u: 0.0,
            b: 1.0 / (1.0 - cfg.gamma),
            children: None,
            terminal: false,
        };
        let mut frontier = Frontier::new(cfg.mode);
        frontier.push(0, &root);
        Ok(Self {
            model,
            gamma: cfg.gamma,
            prune: cfg.prune_collisions,
            nodes: vec![root],
            frontier,
            expansions: 0,
            deepest_expanded: 0,
            best_by_depth: vec![[f64::NEG_INFINITY; NUM_ACTIONS]],
        })
    }

    /// Expands one frontier leaf. Returns `false` when nothing is left to
    /// expand.
    pub fn expand_next(&mut self) -> bool {
        let Some(id) = self.frontier.pop() else {
            return false;
        };
        let parent = self.nodes[id as usize].clone();
        let discount = self.gamma.powi(parent.depth as i32);
        let depth = parent.depth + 1;
        let tail = self.gamma.powi(depth as i32) / (1.0 - self.gamma);
        let first_child = self.nodes.len() as u32;
        if self.best_by_depth.len() <= depth as usize {
            self.best_by_depth.push([f64::NEG_INFINITY; NUM_ACTIONS]);
        }

        for action in Action::ALL {
            let (state, reward, distance) = self.model.transition(&parent.state, action);
            let u = parent.u + discount * reward;
            let terminal = self.prune && distance < self.model.task.obs_d;
            let child = TreeNode {
                state,
                depth,
                parent: Some(id),
                action: Some(action),
                reward,
                u,
                b: if terminal { u } else { u + tail },
                children: None,
                terminal,
            };
            let root_action = if id == 0 { action } else { self.root_action_of(id) };
            let best = &mut self.best_by_depth[depth as usize][root_action.index()];
            *best = best.max(u);
            let child_id = self.nodes.len() as u32;
            if !terminal {
                self.frontier.push(child_id, &child);
            }
            self.nodes.push(child);
        }

        self.nodes[id as usize].children = Some(first_child);
        self.expansions += 1;
        self.deepest_expanded = self.deepest_expanded.max(parent.depth);
        true
    }

    /// Deepest layer whose nodes all exist: everything above the shallowest
    /// open leaf for uniform search, the whole tree otherwise.
    fn counted_depth(&self) -> usize {
        match &self.frontier {
            Frontier::Fifo(queue) => {
                queue.front().map_or(self.best_by_depth.len() - 1, |&id| self.nodes[id as usize].depth as usize)
            }
            Frontier::Optimistic(_) => self.best_by_depth.len() - 1,
        }
    }

    fn root_action_of(&self, mut id: u32) -> Action {
        loop {
            let node = &self.nodes[id as usize];
            match node.parent {
                Some(0) => return node.action.expect("non-root node has an action"),
                Some(p) => id = p,
                None => unreachable!("root has no root action"),
            }
        }
    }

    /// Expands until `budget` expansions have been spent in total or the
    /// frontier runs dry.
    pub fn grow_to(&mut self, budget: usize) {
        while self.expansions < budget && self.expand_next() {}
    }

    /// Best root action so far, lowest id among ties. `blocked` is set when
    /// every root child was pruned, in which case the null action is
    /// returned.
    pub fn best_action(&self) -> (Action, bool) {
        let Some(first) = self.nodes[0].children else {
            return (Action::NULL, false);
        };
        let blocked = (0..NUM_ACTIONS).all(|i| self.nodes[first as usize + i].terminal);
        if blocked {
            return (Action::NULL, true);
        }
        let values = self.root_values();
        let mut best = 0;
        for i in 1..NUM_ACTIONS {
            if values[i] > values[best] {
                best = i;
            }
        }
        (Action::ALL[best], false)
    }

    /// Largest counted `u` below each root child.
    pub fn root_values(&self) -> [f64; NUM_ACTIONS] {
        let mut values = [f64::NEG_INFINITY; NUM_ACTIONS];
        for layer in &self.best_by_depth[..=self.counted_depth()] {
            for (v, l) in values.iter_mut().zip(layer) {
                *v = v.max(*l);
            }
        }
        values
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn expansions(&self) -> usize {
        self.expansions
    }

    pub fn deepest_expanded(&self) -> u32 {
        self.deepest_expanded
    }

    pub fn frontier_len(&self) -> usize {
        self.frontier.len()
    }

    /// Text dump, one node per line:
    /// `id parent depth action u b terminal expanded` (`-` for none).
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# id parent depth action u b terminal expanded")?;
        for (id, n) in self.nodes.iter().enumerate() {
            let parent = n.parent.map_or("-".to_string(), |p| p.to_string());
            let action = n.action.map_or("-".to_string(), |a| a.to_string());
            writeln!(
                w,
                "{id} {parent} {} {action} {:.17e} {:.17e} {} {}",
                n.depth,
                n.u,
                n.b,
                u8::from(n.terminal),
                u8::from(n.is_expanded())
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult {
    pub action: Action,
    pub root_values: [f64; NUM_ACTIONS],
    pub expansions: usize,
    /// Depth of the deepest expanded node.
    pub deepest_depth: u32,
    pub elapsed: Duration,
    /// All root children were collision-pruned.
    pub blocked: bool,
}

/// Builds a tree of `cfg.budget` expansions at `x0` and picks the root
/// action.
pub fn plan(x0: &State, model: Model<'_>, cfg: &PlanConfig) -> Result<PlanResult, PlanError> {
    let started = Instant::now();
    let mut tree = PlanTree::new(*x0, model, cfg)?;
    tree.grow_to(cfg.budget);
    let (action, blocked) = tree.best_action();
    Ok(PlanResult {
        action,
        root_values: tree.root_values(),
        expansions: tree.expansions(),
        deepest_depth: tree.deepest_expanded(),
        elapsed: started.elapsed(),
        blocked,
    })
}

/// Action the planner would return after each expansion count `1..=max`.
/// Entry `n − 1` equals `plan` with budget `n`.
pub fn anytime_actions(x0: &State, model: Model<'_>, cfg: &PlanConfig, max: usize) -> Result<Vec<Action>, PlanError> {
    let mut tree = PlanTree::new(*x0, model, cfg)?;
    let mut actions = Vec::with_capacity(max);
    for n in 1..=max {
        tree.grow_to(n);
        actions.push(tree.best_action().0);
    }
    Ok(actions)
}

/// One executed control step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// State the action was applied in.
    pub state: State,
    pub action: Action,
    /// Reward on arrival in the next state.
    pub reward: f64,
    pub plan_time: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    pub final_state: State,
    pub outcome: Status,
}

impl Rollout {
    pub fn total_plan_time(&self) -> Duration {
        self.transitions.iter().map(|t| t.plan_time).sum()
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        self.transitions.iter().rev().fold(0.0, |acc, t| t.reward + gamma * acc)
    }

    pub fn actions(&self) -> Vec<Action> {
        self.transitions.iter().map(|t| t.action).collect()
    }
}

/// Receding-horizon loop: plan, apply the first action, repeat until the
/// episode ends or `max_steps` actions have been taken.
pub fn replan_horizon(x0: &State, model: Model<'_>, cfg: &PlanConfig, max_steps: usize) -> Result<Rollout, PlanError> {
    cfg.validate()?;
    let task = TaskConfig { max_steps, ..*model.task };
    let mut x = *x0;
    let mut transitions = Vec::new();
    let outcome = loop {
        let status = task::status(&x, transitions.len(), model.world, &task);
        if status.is_terminal() {
            break status;
        }
        let decision = plan(&x, model, cfg)?;
        let (next, reward, _) = model.transition(&x, decision.action);
        transitions.push(Transition { state: x, action: decision.action, reward, plan_time: decision.elapsed });
        x = next;
    };
    Ok(Rollout { transitions, final_state: x, outcome })
}
