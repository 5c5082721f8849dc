//! Environment server for external learning agents.
//!
//! One JSON object per line in each direction and exactly one response per
//! request. A session runs `hello → (reset → step*)* → close`. The wire
//! format is described in `PROTOCOL.md` at the repository root.

use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, ToSocketAddrs};

use serde::{Deserialize, Serialize};

use crate::dynamics::{self, Action, DynamicsParams, State, NUM_ACTIONS};
use crate::task::{self, Status, TaskConfig};
use crate::world3d::{generate_scenario, GenConfig, Scenario, World};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Hello {},
    Reset {
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        scenario: Option<Scenario>,
    },
    Step {
        action: usize,
    },
    Close {},
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub generator: GenConfig,
    pub dynamics: DynamicsParams,
    pub task: TaskConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    /// Message not allowed in the current session state.
    #[serde(rename = "E_ORDER")]
    Order,
    /// Action id outside `0..action_count`.
    #[serde(rename = "E_ACTION")]
    Action,
    /// Line is not a well-formed request.
    #[serde(rename = "E_PARSE")]
    Parse,
    /// Reset named a scenario that cannot be built.
    #[serde(rename = "E_SCENARIO")]
    Scenario,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    HelloAck { protocol_version: u32, action_count: usize, obs_len: usize, config: EnvConfig },
    State { obs: Vec<f64>, reward: f64, done: bool, outcome: Status, step_index: usize },
    Error { code: ErrorCode, message: String },
    Bye,
}

impl Response {
    fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Response::Error { code, message: message.into() }
    }
}

/// An episode in progress, stepped one action at a time.
#[derive(Clone, Debug)]
pub struct Episode {
    world: World,
    state: State,
    step_index: usize,
    status: Status,
}

impl Episode {
    pub fn start(world: World, task: &TaskConfig) -> Self {
        let state = State::at_rest(world.scenario.start);
        let status = task::status(&state, 0, &world, task);
        Self { world, state, step_index: 0, status }
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    /// Applies one action; returns the arrival reward.
    pub fn step(&mut self, action: Action, dynamics: &DynamicsParams, task: &TaskConfig) -> f64 {
        self.state = dynamics::step(&self.state, action, dynamics);
        self.step_index += 1;
        self.status = task::status(&self.state, self.step_index, &self.world, task);
        task::reward(&self.state, &self.world, task)
    }

    fn report(&self, reward: f64, cfg: &EnvConfig) -> Response {
        Response::State {
            obs: task::observe(&self.state, &self.world, &cfg.dynamics, &cfg.task),
            reward,
            done: self.status.is_terminal(),
            outcome: self.status,
            step_index: self.step_index,
        }
    }
}

#[derive(Debug)]
enum Phase {
    AwaitHello,
    Idle,
    Running(Box<Episode>),
    Closed,
}

/// Protocol state machine for one connection.
#[derive(Debug)]
pub struct Session {
    cfg: EnvConfig,
    phase: Phase,
}

impl Session {
    pub fn new(cfg: EnvConfig) -> Self {
        Self { cfg, phase: Phase::AwaitHello }
    }

    pub fn is_closed(&self) -> bool {
        matches!(self.phase, Phase::Closed)
    }

    pub fn handle_line(&mut self, line: &str) -> Response {
        match serde_json::from_str::<Request>(line) {
            Ok(request) => self.handle(request),
            Err(e) => Response::error(ErrorCode::Parse, format!("malformed request: {e}")),
        }
    }

    pub fn handle(&mut self, request: Request) -> Response {
        if self.is_closed() {
            return Response::error(ErrorCode::Order, "session is closed");
        }
        match request {
            Request::Hello {} => {
                if !matches!(self.phase, Phase::AwaitHello) {
                    return Response::error(ErrorCode::Order, "hello already received");
                }
                self.phase = Phase::Idle;
                Response::HelloAck {
                    protocol_version: PROTOCOL_VERSION,
                    action_count: NUM_ACTIONS,
                    obs_len: self.cfg.task.observation_len(),
                    config: self.cfg.clone(),
                }
            }
            Request::Reset { seed, scenario } => {
                if matches!(self.phase, Phase::AwaitHello) {
                    return Response::error(ErrorCode::Order, "reset before hello");
                }
                let scenario = match (seed, scenario) {
                    (Some(seed), None) => generate_scenario(seed, &self.cfg.generator),
                    (None, Some(s)) => s.validate(0.0).map(|_| s),
                    _ => return Response::error(ErrorCode::Parse, "reset needs exactly one of seed or scenario"),
                };
                match scenario {
                    Ok(scenario) => {
                        let episode = Episode::start(World::new(scenario), &self.cfg.task);
                        let response = episode.report(0.0, &self.cfg);
                        self.phase = Phase::Running(Box::new(episode));
                        response
                    }
                    Err(e) => Response::error(ErrorCode::Scenario, e.to_string()),
                }
            }
            Request::Step { action } => {
                let Phase::Running(episode) = &mut self.phase else {
                    return Response::error(ErrorCode::Order, "step before reset");
                };
                if episode.status().is_terminal() {
                    return Response::error(ErrorCode::Order, "episode is done; reset first");
                }
                let Some(action) = Action::from_index(action) else {
                    return Response::error(
                        ErrorCode::Action,
                        format!("action {action} out of range 0..{NUM_ACTIONS}"),
                    );
                };
                let reward = episode.step(action, &self.cfg.dynamics, &self.cfg.task);
                episode.report(reward, &self.cfg)
            }
            Request::Close {} => {
                if matches!(self.phase, Phase::AwaitHello) {
                    return Response::error(ErrorCode::Order, "close before hello");
                }
                self.phase = Phase::Closed;
                Response::Bye
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TranscriptEntry {
    pub request: String,
    pub response: String,
}

/// Serves one session over a line transport until `close` or end of input.
/// Returns every request/response pair.
pub fn serve_session<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    cfg: EnvConfig,
) -> io::Result<Vec<TranscriptEntry>> {
    let mut session = Session::new(cfg);
    let mut transcript = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = serde_json::to_string(&session.handle_line(&line)).expect("response serializes");
        writeln!(output, "{response}")?;
        output.flush()?;
        transcript.push(TranscriptEntry { request: line, response });
        if session.is_closed() {
            break;
        }
    }
    Ok(transcript)
}

/// Serves sessions over TCP, one thread and one isolated session per
/// connection. Runs until the listener fails.
pub fn serve_tcp<A: ToSocketAddrs>(addr: A, cfg: EnvConfig) -> io::Result<()> {
    let listener = TcpListener::bind(addr)?;
    serve_listener(listener, cfg)
}

pub fn serve_listener(listener: TcpListener, cfg: EnvConfig) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let cfg = cfg.clone();
        std::thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(_) => return,
            };
            let _ = serve_session(reader, BufWriter::new(stream), cfg);
        });
    }
    Ok(())
}
