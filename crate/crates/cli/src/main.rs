use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use opd3d::bridge::{self, EnvConfig};
use opd3d::config::RunConfig;
use opd3d::eval::{self, Approach, Execution};
use opd3d::planner::PlanTree;
use opd3d::{generate_scenario, replan_horizon, Model, SearchMode, State, World};

#[derive(Parser)]
#[command(name = "opd3d", version, about = "Look-ahead tree planning for 3D obstacle avoidance")]
struct Cli {
    /// Run configuration file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write generated scenario files for consecutive seeds.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fly one episode with the receding-horizon planner.
    Plan {
        /// Generate the scenario from this seed instead of the configured source.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        overrides: PlanOverrides,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the search tree built at the start state.
        #[arg(long)]
        dump_tree: Option<PathBuf>,
    },
    /// Run the seeded benchmark and write the summary table.
    Bench {
        /// First seed of the benchmark.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Worker threads; 0 uses every core, 1 runs serially.
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        overrides: PlanOverrides,
        /// Gate on the result, e.g. `success>=0.9`. Every approach must pass.
        #[arg(long = "assert", value_name = "EXPR")]
        assertion: Option<Assertion>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the environment protocol.
    Serve {
        /// `stdio` or `tcp:HOST:PORT`.
        #[arg(long, default_value = "stdio")]
        endpoint: Endpoint,
    },
}

#[derive(Args, Clone, Default)]
struct PlanOverrides {
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    mode: Option<SearchMode>,
}

#[derive(Clone, Debug)]
enum Endpoint {
    Stdio,
    Tcp(String),
}

impl std::str::FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stdio" => Ok(Endpoint::Stdio),
            _ => match s.strip_prefix("tcp:") {
                Some(addr) if !addr.is_empty() => Ok(Endpoint::Tcp(addr.to_owned())),
                _ => Err(format!("expected 'stdio' or 'tcp:HOST:PORT', got '{s}'")),
            },
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Cmp {
    Ge,
    Gt,
    Le,
    Lt,
}

#[derive(Clone, Copy, Debug)]
struct Assertion {
    cmp: Cmp,
    value: f64,
}

impl Assertion {
    fn holds(&self, x: f64) -> bool {
        match self.cmp {
            Cmp::Ge => x >= self.value,
            Cmp::Gt => x > self.value,
            Cmp::Le => x <= self.value,
            Cmp::Lt => x < self.value,
        }
    }
}

impl std::str::FromStr for Assertion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let rest =
            compact.strip_prefix("success").ok_or_else(|| format!("assertion must start with 'success': '{s}'"))?;
        let (cmp, value) = [(">=", Cmp::Ge), ("<=", Cmp::Le), (">", Cmp::Gt), ("<", Cmp::Lt)]
            .into_iter()
            .find_map(|(op, cmp)| rest.strip_prefix(op).map(|v| (cmp, v)))
            .ok_or_else(|| format!("expected one of >=, >, <=, < in '{s}'"))?;
        let value: f64 = value.parse().map_err(|_| format!("bad threshold in '{s}'"))?;
        Ok(Assertion { cmp, value })
    }
}

enum Failure {
    /// Bad flags or configuration; nothing was run.
    Usage(String),
    /// A `--assert` gate was not met.
    Assertion(String),
    Runtime(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Assertion(_) | Failure::Runtime(_) => 1,
            Failure::Usage(_) => 2,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            let (Failure::Usage(msg) | Failure::Assertion(msg) | Failure::Runtime(msg)) = &failure;
            eprintln!("error: {msg}");
            ExitCode::from(failure.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(usage)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Gen { seed, count, out } => cmd_gen(&cfg, seed, count, &out_dir(&cfg, out)),
        Command::Plan { seed, overrides, out, dump_tree } => {
            let out = out_dir(&cfg, out);
            cmd_plan(cfg, seed, &overrides, &out, dump_tree.as_deref())
        }
        Command::Bench { seed, episodes, workers, overrides, assertion, out } => {
            let out = out_dir(&cfg, out);
            cmd_bench(cfg, seed, episodes, workers, &overrides, assertion, &out)
        }
        Command::Serve { endpoint } => cmd_serve(&cfg, endpoint),
    }
}

fn out_dir(cfg: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| cfg.output.dir.clone())
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn cmd_gen(cfg: &RunConfig, seed: u64, count: u64, out: &Path) -> Result<(), Failure> {
    create_dir(out)?;
    let mut failed = 0;
    for seed in seed..seed.saturating_add(count) {
        match generate_scenario(seed, &cfg.generator) {
            Ok(scenario) => {
                let path = out.join(format!("scenario_{seed}.toml"));
                scenario.save(&path).map_err(runtime)?;
                println!("{}", path.display());
            }
            Err(e) => {
                eprintln!("seed {seed}: {e}");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(runtime(format!("{failed} of {count} scenarios failed to generate")));
    }
    Ok(())
}

fn apply_overrides(plan: &mut opd3d::PlanConfig, overrides: &PlanOverrides) {
    if let Some(budget) = overrides.budget {
        plan.budget = budget;
    }
    if let Some(gamma) = overrides.gamma {
        plan.gamma = gamma;
    }
    if let Some(mode) = overrides.mode {
        plan.mode = mode;
    }
}

fn cmd_plan(
    mut cfg: RunConfig,
    seed: Option<u64>,
    overrides: &PlanOverrides,
    out: &Path,
    dump_tree: Option<&Path>,
) -> Result<(), Failure> {
    if let Some(seed) = seed {
        cfg.scenario.path = None;
        cfg.scenario.seed = Some(seed);
    }
    apply_overrides(&mut cfg.plan, overrides);
    cfg.validate().map_err(usage)?;
    let scenario = cfg.resolve_scenario().map_err(usage)?;
    let world = World::new(scenario);
    let model = Model::new(&world, &cfg.dynamics, &cfg.task);
    let x0 = State::at_rest(world.scenario.start);

    if let Some(path) = dump_tree {
        let mut tree = PlanTree::new(x0, model, &cfg.plan).map_err(usage)?;
        tree.grow_to(cfg.plan.budget);
        let file = fs::File::create(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        tree.write_dump(BufWriter::new(file)).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    }

    let rollout = replan_horizon(&x0, model, &cfg.plan, cfg.task.max_steps).map_err(usage)?;
    create_dir(out)?;

    let mut csv = String::from("t,px,py,pz,vx,vy,vz,action,reward\n");
    let dt = cfg.dynamics.dt;
    let row = |csv: &mut String, k: usize, x: &State, tail: &str| {
        let (p, v) = (x.p, x.v);
        let _ = writeln!(csv, "{},{},{},{},{},{},{},{tail}", k as f64 * dt, p.x, p.y, p.z, v.x, v.y, v.z);
    };
    for (k, t) in rollout.transitions.iter().enumerate() {
        row(&mut csv, k, &t.state, &format!("{},{}", t.action.index(), t.reward));
    }
    row(&mut csv, rollout.transitions.len(), &rollout.final_state, ",");
    let path = out.join("trajectory.csv");
    write_file(&path, &csv)?;

    let steps = rollout.transitions.len();
    let mean_ms = if steps == 0 { 0.0 } else { rollout.total_plan_time().as_secs_f64() * 1e3 / steps as f64 };
    println!(
        "outcome={} steps={steps} mean_plan_time_ms={mean_ms:.3} return={:.6} trajectory={}",
        rollout.outcome,
        rollout.discounted_return(cfg.plan.gamma),
        path.display()
    );
    Ok(())
}

fn cmd_bench(
    mut cfg: RunConfig,
    seed: Option<u64>,
    episodes: Option<usize>,
    workers: Option<usize>,
    overrides: &PlanOverrides,
    assertion: Option<Assertion>,
    out: &Path,
) -> Result<(), Failure> {
    if let Some(seed) = seed {
        cfg.bench.first_seed = seed;
    }
    if let Some(n) = episodes {
        cfg.bench.episodes = n;
    }
    if let Some(w) = workers {
        cfg.bench.workers = w;
    }
    if let Some(mode) = overrides.mode {
        cfg.bench.approaches = vec![Approach { label: mode.to_string(), plan: cfg.plan }];
    }
    for approach in &mut cfg.bench.approaches {
        apply_overrides(&mut approach.plan, overrides);
    }
    cfg.validate().map_err(usage)?;
    let spec = cfg.bench_spec();
    spec.validate().map_err(usage)?;

    let execution = match cfg.bench.workers {
        0 => Execution::Parallel,
        1 => Execution::Serial,
        n => Execution::ParallelWith(n),
    };
    let report = eval::benchmark(&spec, execution).map_err(runtime)?;

    create_dir(out)?;
    let csv = report.table.to_csv();
    write_file(&out.join("table.csv"), &csv)?;
    write_file(&out.join("episodes.jsonl"), &eval::episodes_to_jsonl(&report.episodes))?;
    print!("{csv}");

    if let Some(assertion) = assertion {
        let failing: Vec<String> = report
            .table
            .rows
            .iter()
            .filter(|row| !assertion.holds(row.success_fraction))
            .map(|row| format!("{}={}", row.approach, row.success_fraction))
            .collect();
        if !failing.is_empty() {
            return Err(Failure::Assertion(format!("success assertion failed: {}", failing.join(", "))));
        }
    }
    Ok(())
}

fn cmd_serve(cfg: &RunConfig, endpoint: Endpoint) -> Result<(), Failure> {
    let env = EnvConfig { generator: cfg.generator.clone(), dynamics: cfg.dynamics, task: cfg.task };
    match endpoint {
        Endpoint::Stdio => {
            let stdin = io::stdin();
            bridge::serve_session(stdin.lock(), io::stdout().lock(), env).map_err(runtime)?;
            Ok(())
        }
        Endpoint::Tcp(addr) => {
            let listener = std::net::TcpListener::bind(&addr).map_err(|e| runtime(format!("bind {addr}: {e}")))?;
            if let Ok(local) = listener.local_addr() {
                eprintln!("listening on {local}");
            }
            bridge::serve_listener(listener, env).map_err(runtime)
        }
    }
}
