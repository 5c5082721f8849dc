//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{SMatrix, SVector, Vector3};
use opd3d::bridge::{serve_session, EnvConfig, ErrorCode, Response, Session};
use opd3d::dynamics::{self, Action, DynamicsParams, State, NUM_ACTIONS};
use opd3d::eval::{self, Approach, BenchSpec, Execution};
use opd3d::planner::{anytime_actions, plan, Model, PlanConfig, SearchMode};
use opd3d::rng::SplitMix64;
use opd3d::task::{self, Status, TaskConfig};
use opd3d::world3d::{generate_scenario, GenConfig, Obstacle, World};

type Vec6 = SVector<f64, 6>;

struct Verdict {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Verdict);

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("dynamics exactness", dynamics_exactness),
        ("reward contract", reward_contract),
        ("planner optimality", planner_optimality),
        ("optimistic efficiency", optimistic_efficiency),
        ("benchmark success", benchmark_success),
        ("determinism", determinism),
        ("spatial index equivalence", spatial_index_equivalence),
        ("robust return", robust_return_properties),
        ("bridge conformance", bridge_conformance),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let message = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {message}"))
        });
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("{tag} AC{} {name} ({:.2} s): {}", i + 1, started.elapsed().as_secs_f64(), result.detail);
        failures += usize::from(!result.pass);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}

fn within(started: Instant, limit: Duration) -> bool {
    started.elapsed() < limit
}

// ---------------------------------------------------------------------------
// Dynamics

/// Classical RK4 on `ẋ = A x + B u` with the full 6×6 system matrix.
fn rk4(x: &State, u: Vector3<f64>, params: &DynamicsParams, dt: f64, substeps: usize) -> State {
    let mut a = SMatrix::<f64, 6, 6>::zeros();
    for i in 0..3 {
        a[(i, i + 3)] = 1.0;
        a[(i + 3, i + 3)] = -params.theta[i];
    }
    let mut forcing = Vec6::zeros();
    for i in 0..3 {
        forcing[i + 3] = params.beta * u[i];
    }
    let f = |y: &Vec6| a * y + forcing;
    let mut y = Vec6::new(x.p.x, x.p.y, x.p.z, x.v.x, x.v.y, x.v.z);
    let h = dt / substeps as f64;
    for _ in 0..substeps {
        let k1 = f(&y);
        let k2 = f(&(y + 0.5 * h * k1));
        let k3 = f(&(y + 0.5 * h * k2));
        let k4 = f(&(y + h * k3));
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    State::new(Vector3::new(y[0], y[1], y[2]), Vector3::new(y[3], y[4], y[5]))
}

fn max_deviation(a: &State, b: &State) -> f64 {
    (a.p - b.p).amax().max((a.v - b.v).amax())
}

fn random_vector(rng: &mut SplitMix64, lo: f64, hi: f64) -> Vector3<f64> {
    Vector3::new(rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi))
}

fn random_action(rng: &mut SplitMix64) -> Action {
    Action::ALL[(rng.next_u64() % NUM_ACTIONS as u64) as usize]
}

/// Paths long enough to cross many steps but short enough that the true
/// separation of θ = 1e-8 from θ = 0, about θ(|v|T²/2 + T³/6), stays below
/// the tolerance.
const LIMIT_PATH_STEPS: usize = 20;

fn dynamics_exactness() -> Verdict {
    let started = Instant::now();
    let mut rng = SplitMix64::new(2024);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let x = State::new(random_vector(&mut rng, -5.0, 5.0), random_vector(&mut rng, -3.0, 3.0));
        let action = random_action(&mut rng);
        let params = DynamicsParams { theta: random_vector(&mut rng, 0.0, 2.0), beta: 1.0, dt: rng.uniform(0.05, 0.5) };
        let exact = dynamics::step(&x, action, &params);
        let oracle = rk4(&x, action.vector(), &params, params.dt, 1000);
        worst = worst.max(max_deviation(&exact, &oracle));
    }

    let mut limit_gap = 0.0f64;
    for trial in 0..20 {
        let mut rng = SplitMix64::new(trial);
        let x0 = State::new(random_vector(&mut rng, -5.0, 5.0), random_vector(&mut rng, -3.0, 3.0));
        let zero = DynamicsParams { theta: Vector3::zeros(), ..DynamicsParams::default() };
        let tiny = DynamicsParams { theta: Vector3::repeat(1e-8), ..DynamicsParams::default() };
        let (mut a, mut b) = (x0, x0);
        for _ in 0..LIMIT_PATH_STEPS {
            let action = random_action(&mut rng);
            a = dynamics::step(&a, action, &zero);
            b = dynamics::step(&b, action, &tiny);
            limit_gap = limit_gap.max(max_deviation(&a, &b));
        }
    }
    let fast = within(started, Duration::from_secs(5));
    verdict(
        worst <= 1e-6 && limit_gap <= 1e-6 && fast,
        format!("max |step − RK4| = {worst:.2e} over 200 samples (tol 1e-6); θ=0 vs θ=1e-8 {LIMIT_PATH_STEPS}-step path gap {limit_gap:.2e} (tol 1e-6)"),
    )
}

// ---------------------------------------------------------------------------
// Reward

fn brute_surface_distance(obstacles: &[Obstacle], p: &Vector3<f64>) -> f64 {
    obstacles.iter().map(|o| (p - o.center).norm() - o.radius).fold(f64::INFINITY, f64::min)
}

fn reward_contract() -> Verdict {
    let started = Instant::now();
    let cfg = TaskConfig::default();
    let mut rng = SplitMix64::new(7);
    let (mut out_of_range, mut nonzero_near, mut wrong_free) = (0, 0, 0);
    let (mut near, mut free) = (0, 0);
    for world_seed in 0..10 {
        let world = World::new(generate_scenario(world_seed, &GenConfig::default()).unwrap());
        let obstacles = &world.scenario.obstacles;
        for i in 0..1000 {
            let p = if i % 2 == 0 {
                let o = &obstacles[(rng.next_u64() % obstacles.len() as u64) as usize];
                let dir = random_vector(&mut rng, -1.0, 1.0).normalize();
                o.center + dir * (o.radius + rng.uniform(-0.5, 2.5))
            } else {
                random_vector(&mut rng, -10.0, 10.0)
            };
            let x = State::new(p, random_vector(&mut rng, -3.0, 3.0));
            let r = task::reward(&x, &world, &cfg);
            let d = brute_surface_distance(obstacles, &p);
            if !(0.0..=1.0).contains(&r) {
                out_of_range += 1;
            }
            if d < cfg.obs_d - 1e-9 {
                near += 1;
                if r != 0.0 {
                    nonzero_near += 1;
                }
            } else if d >= cfg.delta_max + 1e-9 {
                free += 1;
                let expected = 1.0 / (1.0 + (p - world.scenario.goal).norm());
                if (r - expected).abs() > 1e-15 {
                    wrong_free += 1;
                }
            }
        }
    }
    let fast = within(started, Duration::from_secs(5));
    let pass = out_of_range == 0 && nonzero_near == 0 && wrong_free == 0 && near >= 1000 && free >= 1000 && fast;
    verdict(
        pass,
        format!(
            "10000 states: {out_of_range} outside [0,1]; {nonzero_near}/{near} near-obstacle states with nonzero reward; \
             {wrong_free}/{free} free-space states off 1/(1+dist)"
        ),
    )
}

// ---------------------------------------------------------------------------
// Planner

/// Small world with up to three obstacles; the start velocity points at the
/// nearest obstacle.
fn small_instance(seed: u64) -> (World, State) {
    let gen = GenConfig {
        bounds_min: Vector3::repeat(-4.0),
        bounds_max: Vector3::repeat(4.0),
        n_obstacles: 3,
        radius_min: 0.5,
        radius_max: 1.0,
        clearance_margin: 0.5,
        min_goal_distance: 2.0,
        ..GenConfig::default()
    };
    let world = World::new(generate_scenario(seed, &gen).unwrap());
    let start = world.scenario.start;
    let nearest = world
        .scenario
        .obstacles
        .iter()
        .min_by(|a, b| a.surface_distance(&start).total_cmp(&b.surface_distance(&start)))
        .unwrap();
    let mut rng = SplitMix64::new(seed ^ 0xABCD);
    let v = (nearest.center - start).normalize() * rng.uniform(1.5, 3.0);
    (world, State::new(start, v))
}

fn full_budget(depth: u32) -> usize {
    (NUM_ACTIONS.pow(depth) - 1) / (NUM_ACTIONS - 1)
}

fn planner_optimality() -> Verdict {
    let started = Instant::now();
    let gamma = 0.9;
    let (dynamics, task_cfg) = (DynamicsParams::default(), TaskConfig::default());
    let exact_budgets = [full_budget(5), (NUM_ACTIONS.pow(6) - NUM_ACTIONS) / (NUM_ACTIONS - 1)];
    let (mut uniform_ok, mut optimistic_ok) = (0, 0);
    let mut worst_uniform = 0.0f64;
    let mut worst_ratio = 0.0f64;
    for seed in 0..50 {
        let (world, x0) = small_instance(seed);
        let model = Model::new(&world, &dynamics, &task_cfg);

        let q5 = eval::exhaustive_q(&x0, 5, model, gamma).unwrap();
        let mut zero = true;
        for budget in exact_budgets {
            let cfg = PlanConfig { gamma, budget, mode: SearchMode::Uniform, prune_collisions: false };
            let regret = eval::regret_from_q(&q5, plan(&x0, model, &cfg).unwrap().action);
            worst_uniform = worst_uniform.max(regret);
            zero &= regret <= 1e-12;
        }
        uniform_ok += usize::from(zero);

        let q8 = eval::exhaustive_q(&x0, 8, model, gamma).unwrap();
        let cfg = PlanConfig { gamma, budget: 3000, mode: SearchMode::Optimistic, prune_collisions: false };
        let result = plan(&x0, model, &cfg).unwrap();
        let tree_depth = result.deepest_depth as i32 + 1;
        let bound = (gamma.powi(tree_depth) + 2.0 * gamma.powi(8)) / (1.0 - gamma);
        let regret = eval::regret_from_q(&q8, result.action);
        worst_ratio = worst_ratio.max(regret / bound);
        optimistic_ok += usize::from(regret <= bound);
    }
    let fast = within(started, Duration::from_secs(120));
    verdict(
        uniform_ok == 50 && optimistic_ok == 50 && fast,
        format!(
            "uniform full depth-5 tree zero regret {uniform_ok}/50 (max {worst_uniform:.1e}, float tol 1e-12); \
             optimistic n=3000 within bound {optimistic_ok}/50 (max regret/bound {worst_ratio:.3})"
        ),
    )
}

fn optimistic_efficiency() -> Verdict {
    let started = Instant::now();
    let gamma = 0.9;
    let depth = 6;
    let cap = full_budget(depth);
    let (dynamics, task_cfg) = (DynamicsParams::default(), TaskConfig::default());
    let mut wins = 0;
    let mut totals = [0usize; 2];
    for seed in 0..30 {
        let (world, x0) = small_instance(seed);
        let model = Model::new(&world, &dynamics, &task_cfg);
        let q = eval::exhaustive_q(&x0, depth, model, gamma).unwrap();
        let needed = |mode| {
            let cfg = PlanConfig { gamma, budget: 1, mode, prune_collisions: false };
            anytime_actions(&x0, model, &cfg, cap)
                .unwrap()
                .iter()
                .position(|&a| eval::regret_from_q(&q, a) <= 0.05)
                .map_or(usize::MAX, |i| i + 1)
        };
        let (uniform, optimistic) = (needed(SearchMode::Uniform), needed(SearchMode::Optimistic));
        totals[0] = totals[0].saturating_add(uniform);
        totals[1] = totals[1].saturating_add(optimistic);
        wins += usize::from(optimistic <= uniform);
    }
    let fast = within(started, Duration::from_secs(120));
    verdict(
        wins * 10 >= 30 * 8 && fast,
        format!(
            "optimistic needed ≤ uniform expansions on {wins}/30 instances (need 24); total expansions uniform {} optimistic {}",
            totals[0], totals[1]
        ),
    )
}

// ---------------------------------------------------------------------------
// Benchmark

fn benchmark_spec() -> BenchSpec {
    BenchSpec {
        generator: GenConfig::default(),
        dynamics: DynamicsParams::default(),
        task: TaskConfig::default(),
        seeds: (0..100).collect(),
        approaches: vec![Approach {
            label: "optimistic".into(),
            plan: PlanConfig { gamma: 0.9, budget: 1000, mode: SearchMode::Optimistic, prune_collisions: true },
        }],
    }
}

fn benchmark_success() -> Verdict {
    let started = Instant::now();
    let report = eval::benchmark(&benchmark_spec(), Execution::Parallel).unwrap();
    let row = &report.table.rows[0];
    let fast = within(started, Duration::from_secs(600));
    verdict(
        row.success_fraction >= 0.90 && row.episodes == 100 && fast,
        format!(
            "success {}/{} = {:.2} (need 0.90); mean plan time per decision {:.4} s",
            row.successes, row.episodes, row.success_fraction, row.mean_execution_time
        ),
    )
}

fn determinism() -> Verdict {
    let spec = benchmark_spec();
    let first = eval::benchmark(&spec, Execution::Parallel).unwrap();
    let second = eval::benchmark(&spec, Execution::Serial).unwrap();
    let same = first.episodes.len() == second.episodes.len()
        && first.episodes.iter().zip(&second.episodes).all(|(a, b)| a.same_behaviour(b));
    let differing = first.episodes.iter().zip(&second.episodes).filter(|(a, b)| !a.same_behaviour(b)).count();
    verdict(
        same,
        format!(
            "{} episodes rerun (parallel then serial): {differing} differ in outcome, actions or path",
            first.episodes.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// Spatial index

fn spatial_index_equivalence() -> Verdict {
    let gen = GenConfig { n_obstacles: 50, ..GenConfig::default() };
    let mut rng = SplitMix64::new(99);
    let (mut argmin_mismatch, mut worst) = (0, 0.0f64);
    for seed in 0..10 {
        let world = World::new(generate_scenario(seed, &gen).unwrap());
        let obstacles = &world.scenario.obstacles;
        for i in 0..1000 {
            let p = if i % 4 == 0 {
                let o = &obstacles[(rng.next_u64() % 50) as usize];
                o.center + random_vector(&mut rng, -2.0, 2.0)
            } else {
                random_vector(&mut rng, -12.0, 12.0)
            };
            let mut best = (0, f64::INFINITY);
            for (k, o) in obstacles.iter().enumerate() {
                let d = (p - o.center).norm() - o.radius;
                if d < best.1 {
                    best = (k, d);
                }
            }
            let grid = world.index.nearest(&p).unwrap();
            argmin_mismatch += usize::from(grid.index != best.0);
            worst = worst.max((grid.distance - best.1).abs());
        }
    }
    verdict(
        argmin_mismatch == 0 && worst <= 1e-12,
        format!("10000 queries on 50-obstacle worlds: {argmin_mismatch} argmin mismatches, max |Δd| {worst:.1e} (tol 1e-12)"),
    )
}

// ---------------------------------------------------------------------------
// Robust return

fn rollout_return(
    x0: &State,
    actions: &[Action],
    params: &DynamicsParams,
    world: &World,
    cfg: &TaskConfig,
    gamma: f64,
) -> f64 {
    let mut x = *x0;
    let mut total = 0.0;
    let mut discount = 1.0;
    for &a in actions {
        x = dynamics::step(&x, a, params);
        total += discount * task::reward(&x, world, cfg);
        discount *= gamma;
    }
    total
}

fn robust_return_properties() -> Verdict {
    let gamma = 0.9;
    let base = DynamicsParams::default();
    let cfg = TaskConfig::default();
    let mut singleton_ok = true;
    let mut monotone_ok = true;
    let mut explicit_ok = true;
    for seed in 0..20 {
        let world = World::new(generate_scenario(seed, &GenConfig::default()).unwrap());
        let mut rng = SplitMix64::new(seed + 500);
        let actions: Vec<Action> = (0..25).map(|_| random_action(&mut rng)).collect();
        let x0 = State::at_rest(world.scenario.start);

        let robust =
            |set: &[Vector3<f64>]| eval::robust_return(&x0, &actions, set, &base, &world, &cfg, gamma).unwrap();
        let nominal = eval::open_loop_return(&x0, &actions, Model::new(&world, &base, &cfg), gamma);
        singleton_ok &= robust(&[base.theta]) == nominal;

        let candidates: Vec<Vector3<f64>> = (0..6).map(|_| random_vector(&mut rng, 0.0, 2.0)).collect();
        let mut previous = f64::INFINITY;
        for k in 1..=candidates.len() {
            let value = robust(&candidates[..k]);
            monotone_ok &= value <= previous;
            previous = value;
        }

        let three = &candidates[..3];
        let explicit = three
            .iter()
            .map(|theta| rollout_return(&x0, &actions, &DynamicsParams { theta: *theta, ..base }, &world, &cfg, gamma))
            .fold(f64::INFINITY, f64::min);
        explicit_ok &= (robust(three) - explicit).abs() <= 1e-12;
    }
    verdict(
        singleton_ok && monotone_ok && explicit_ok,
        format!(
            "20 fixtures: singleton equals nominal {singleton_ok}; nonincreasing under set growth {monotone_ok}; \
             3-candidate explicit min {explicit_ok}"
        ),
    )
}

// ---------------------------------------------------------------------------
// Bridge

fn env_config() -> EnvConfig {
    EnvConfig { generator: GenConfig::default(), dynamics: DynamicsParams::default(), task: TaskConfig::default() }
}

fn wire(session: &mut Session, line: &str) -> Response {
    let text = serde_json::to_string(&session.handle_line(line)).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn bridge_matches_in_process(seed: u64) -> Result<usize, String> {
    let cfg = env_config();
    let mut session = Session::new(cfg.clone());
    wire(&mut session, r#"{"type":"hello"}"#);

    let world = World::new(generate_scenario(seed, &cfg.generator).unwrap());
    let mut x = State::at_rest(world.scenario.start);
    let mut rng = SplitMix64::new(seed.wrapping_mul(31) + 1);

    let expected = |x: &State, reward: f64, step: usize| {
        let status = task::status(x, step, &world, &cfg.task);
        (task::observe(x, &world, &cfg.dynamics, &cfg.task), reward, status.is_terminal(), status)
    };
    let mut response = wire(&mut session, &format!(r#"{{"type":"reset","seed":{seed}}}"#));
    let mut want = expected(&x, 0.0, 0);
    let mut step = 0;
    loop {
        match &response {
            Response::State { obs, reward, done, outcome, step_index } => {
                let ok = same_bits(obs, &want.0)
                    && reward.to_bits() == want.1.to_bits()
                    && *done == want.2
                    && *outcome == want.3
                    && *step_index == step;
                if !ok {
                    return Err(format!("seed {seed}: mismatch at step {step}"));
                }
                if *done || step == 120 {
                    return Ok(step);
                }
            }
            other => return Err(format!("seed {seed}: unexpected {other:?}")),
        }
        let action = random_action(&mut rng);
        step += 1;
        x = dynamics::step(&x, action, &cfg.dynamics);
        let reward = task::reward(&x, &world, &cfg.task);
        want = expected(&x, reward, step);
        response = wire(&mut session, &format!(r#"{{"type":"step","action":{}}}"#, action.index()));
    }
}

fn malformed_line(rng: &mut SplitMix64, i: usize) -> String {
    let valid =
        [r#"{"type":"hello"}"#, r#"{"type":"reset","seed":4}"#, r#"{"type":"step","action":2}"#, r#"{"type":"close"}"#];
    match i % 8 {
        0 => {
            let v = valid[(rng.next_u64() % 4) as usize];
            let cut = 1 + (rng.next_u64() as usize) % (v.len() - 1);
            v[..cut].to_owned()
        }
        1 => (0..1 + rng.next_u64() % 40)
            .map(|_| char::from(b'!' + (rng.next_u64() % 90) as u8))
            .collect::<String>()
            .replace(['{', '['], "("),
        2 => format!(r#"{{"type":"step","action":"{}"}}"#, rng.next_u64() % 7),
        3 => format!(r#"{{"type":"step","action":-{}}}"#, 1 + rng.next_u64() % 100),
        4 => format!(r#"{{"type":"{}"}}"#, ["jump", "HELLO", "", "steps", "reset_all"][(rng.next_u64() % 5) as usize]),
        5 => format!(r#"{{"type":"hello","extra":{}}}"#, rng.next_u64() % 10),
        6 => {
            ["[]", "null", "42", "\"hello\"", "{}", "{\"action\":1}", "true"][(rng.next_u64() % 7) as usize].to_owned()
        }
        _ => format!(r#"{{"type":"reset","seed":{},"scenario":{{}}}}"#, rng.next_u64() % 10),
    }
}

fn bridge_conformance() -> Verdict {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let input = std::fs::read_to_string(fixtures.join("bridge_session.in.jsonl")).unwrap();
    let golden = std::fs::read_to_string(fixtures.join("bridge_session.out.jsonl")).unwrap();
    let mut output = Vec::new();
    serve_session(input.as_bytes(), &mut output, env_config()).unwrap();
    let golden_ok = String::from_utf8(output).unwrap() == golden;

    let mut episode_errors = Vec::new();
    let mut steps = 0;
    for seed in 0..10 {
        match bridge_matches_in_process(seed) {
            Ok(n) => steps += n,
            Err(e) => episode_errors.push(e),
        }
    }

    let mut session = Session::new(env_config());
    wire(&mut session, r#"{"type":"hello"}"#);
    wire(&mut session, r#"{"type":"reset","seed":1}"#);
    let mut rng = SplitMix64::new(5150);
    let mut unexpected = 0;
    for i in 0..1000 {
        let line = malformed_line(&mut rng, i);
        match wire(&mut session, &line) {
            Response::Error { code: ErrorCode::Parse | ErrorCode::Order, .. } => {}
            _ => unexpected += 1,
        }
    }
    let alive = matches!(
        wire(&mut session, r#"{"type":"step","action":1}"#),
        Response::State { step_index: 1, outcome: Status::Running, .. }
    );
    verdict(
        golden_ok && episode_errors.is_empty() && unexpected == 0 && alive,
        format!(
            "golden transcript {}; 10 episodes ({steps} steps) bit-identical {}; 1000 malformed lines: {unexpected} non-parse/order replies, session alive {alive}",
            if golden_ok { "matches" } else { "differs" },
            if episode_errors.is_empty() { "yes".to_owned() } else { episode_errors.join("; ") },
        ),
    )
}
