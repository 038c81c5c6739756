//! Deterministic simulated tool environments.
//!
//! An [`Environment`] pairs a validated [`ApiGraph`] with one executor
//! backend. States are immutable snapshots: [`Environment::execute`] returns
//! a successor instead of mutating, and `reset` is a pure function of the
//! environment and seed.

mod filesys;
pub mod hints;
pub mod render;
pub mod spec;
mod ticketing;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use filesys::{FilesysStore, Node};
pub use spec::EnvSpec;
pub use ticketing::{Ticket, TicketingStore};

use crate::apigraph::{ApiGraph, CalledSet, GraphError, SampleCase, ToolSpec};
pub use crate::call::ToolCall;
use crate::value::Value;
use render::render_json;

/// Attempts allowed per trace step before turn generation gives up.
pub const STEP_RETRY_BUDGET: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Backend {
    Ticketing,
    Filesys,
}

impl Backend {
    fn parse(prefix: &str) -> Option<Self> {
        match prefix {
            "ticketing" => Some(Backend::Ticketing),
            "filesys" => Some(Backend::Filesys),
            _ => None,
        }
    }

    fn operations(self) -> &'static [&'static str] {
        match self {
            Backend::Ticketing => ticketing::OPERATIONS,
            Backend::Filesys => filesys::OPERATIONS,
        }
    }

    fn mutating(self) -> &'static [&'static str] {
        match self {
            Backend::Ticketing => ticketing::MUTATING,
            Backend::Filesys => filesys::MUTATING,
        }
    }
}

/// Backend-specific environment data.
#[derive(Debug, Clone, PartialEq)]
pub enum Store {
    Ticketing(TicketingStore),
    Filesys(FilesysStore),
}

impl Store {
    fn to_json(&self) -> Json {
        match self {
            Store::Ticketing(t) => json!({ "ticketing": t.to_json() }),
            Store::Filesys(f) => json!({ "filesys": f.to_json() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub env_id: String,
    pub seed: u64,
    pub store: Store,
    /// Incremented by exactly one on every successful mutating call.
    pub version: u64,
}

impl EnvState {
    /// Canonical single-line rendering of the whole state.
    pub fn render(&self) -> String {
        render_json(&json!({
            "env_id": self.env_id,
            "seed": self.seed,
            "version": self.version,
            "store": self.store.to_json(),
        }))
    }

    /// Hex SHA-256 of [`EnvState::render`].
    pub fn digest(&self) -> String {
        Sha256::digest(self.render().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    UnknownTool,
    ArgType,
    Domain,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::UnknownTool => "UNKNOWN_TOOL",
            ErrorCode::ArgType => "ARG_TYPE",
            ErrorCode::Domain => "DOMAIN",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Value(Json),
    Error { code: ErrorCode, message: String },
}

/// What a tool call returned, plus its canonical text form.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvFeedback {
    pub outcome: Outcome,
    pub raw_text: String,
}

impl EnvFeedback {
    pub fn value(payload: Json) -> Self {
        Self {
            raw_text: render_json(&payload),
            outcome: Outcome::Value(payload),
        }
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        let message = message.into();
        Self {
            raw_text: render_json(&json!({ "error": { "code": code.as_str(), "message": message } })),
            outcome: Outcome::Error { code, message },
        }
    }

    pub fn is_error(&self) -> bool {
        matches!(self.outcome, Outcome::Error { .. })
    }

    pub fn error_code(&self) -> Option<ErrorCode> {
        match self.outcome {
            Outcome::Error { code, .. } => Some(code),
            Outcome::Value(_) => None,
        }
    }

    pub fn payload(&self) -> Option<&Json> {
        match &self.outcome {
            Outcome::Value(v) => Some(v),
            Outcome::Error { .. } => None,
        }
    }

    /// The payload as a call-syntax literal.
    pub fn payload_value(&self) -> Option<Value> {
        self.payload().map(Value::from_json)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub call: ToolCall,
    pub feedback: EnvFeedback,
    /// Sampling branch that chose this tool.
    pub case: SampleCase,
    /// Failed attempts discarded before this step succeeded.
    pub discarded_attempts: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceMetadata {
    pub fallback_steps: Vec<usize>,
    pub target_reached: bool,
    pub discarded_attempts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnTrace {
    pub target: String,
    pub steps: Vec<TraceStep>,
    pub start_version: u64,
    pub end_version: u64,
    pub metadata: TraceMetadata,
}

impl TurnTrace {
    pub fn calls(&self) -> Vec<ToolCall> {
        self.steps.iter().map(|s| s.call.clone()).collect()
    }

    fn finish_metadata(&mut self) {
        self.metadata = TraceMetadata {
            fallback_steps: self
                .steps
                .iter()
                .enumerate()
                .filter(|(_, s)| s.case == SampleCase::Fallback)
                .map(|(i, _)| i)
                .collect(),
            target_reached: self.steps.iter().any(|s| s.call.tool == self.target),
            discarded_attempts: self.steps.iter().map(|s| s.discarded_attempts).sum(),
        };
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("tool `{tool}`: executor `{executor}` does not resolve to a known backend operation")]
    UnknownExecutor { tool: String, executor: String },
    #[error("tools mix executor backends `{0}` and `{1}`")]
    MixedBackends(String, String),
    #[error("tool `{tool}` parameter `{param}`: unknown generator hint `{hint}`")]
    UnknownHint { tool: String, param: String, hint: String },
    #[error("environment has no tools")]
    NoTools,
    #[error("bad fixtures: {0}")]
    Fixture(String),
    #[error("state belongs to environment `{found}`, expected `{expected}`")]
    ForeignState { expected: String, found: String },
    #[error("no viable value for required parameter `{param}` of `{tool}`")]
    GenerationExhausted { tool: String, param: String },
}

#[derive(Debug, Error)]
#[error("turn generation toward `{}` failed at step {step}: {reason}", partial.target)]
pub struct TurnError {
    pub step: usize,
    pub reason: String,
    /// Steps completed before the failure.
    pub partial: Box<TurnTrace>,
}

#[derive(Debug, Clone)]
pub struct Environment {
    spec: EnvSpec,
    graph: ApiGraph,
    backend: Backend,
    /// Tool name to backend operation.
    operations: BTreeMap<String, String>,
}

impl Environment {
    pub fn from_spec(spec: EnvSpec) -> Result<Self, EnvError> {
        if spec.tools.is_empty() {
            return Err(EnvError::NoTools);
        }
        let graph = ApiGraph::new(spec.tools.clone())?;

        let mut backend: Option<(Backend, String)> = None;
        let mut operations = BTreeMap::new();
        for tool in graph.tools() {
            let unresolved = || EnvError::UnknownExecutor {
                tool: tool.name.clone(),
                executor: tool.executor.clone(),
            };
            let (prefix, op) = tool.executor.split_once('.').ok_or_else(unresolved)?;
            let kind = Backend::parse(prefix).ok_or_else(unresolved)?;
            if !kind.operations().contains(&op) {
                return Err(unresolved());
            }
            match &backend {
                Some((existing, name)) if *existing != kind => {
                    return Err(EnvError::MixedBackends(name.clone(), prefix.to_string()));
                }
                Some(_) => {}
                None => backend = Some((kind, prefix.to_string())),
            }
            operations.insert(tool.name.clone(), op.to_string());

            for param in &tool.params {
                if let Some(hint) = &param.generator_hint {
                    if !hints::is_registered(hint) {
                        return Err(EnvError::UnknownHint {
                            tool: tool.name.clone(),
                            param: param.name.clone(),
                            hint: hint.clone(),
                        });
                    }
                }
            }
        }
        let (backend, _) = backend.expect("at least one tool");
        let env = Self {
            spec,
            graph,
            backend,
            operations,
        };
        // Fixtures must build at both the golden seed and an arbitrary one.
        env.try_reset(env.golden_seed())?;
        env.try_reset(env.golden_seed().wrapping_add(1))?;
        Ok(env)
    }

    pub fn from_json(text: &str) -> Result<Self, EnvError> {
        let spec = EnvSpec::from_json(text).map_err(|e| EnvError::Fixture(e.to_string()))?;
        Self::from_spec(spec)
    }

    /// One of the shipped reference environments: `ticketing` or `filesys`.
    pub fn builtin(env_id: &str) -> Result<&'static Environment, EnvError> {
        static BUILTINS: OnceLock<BTreeMap<String, Environment>> = OnceLock::new();
        BUILTINS
            .get_or_init(|| {
                [spec::TICKETING_SPEC, spec::FILESYS_SPEC]
                    .into_iter()
                    .map(|text| {
                        let env = Environment::from_json(text).expect("shipped environment specs are valid");
                        (env.id().to_string(), env)
                    })
                    .collect()
            })
            .get(env_id)
            .ok_or_else(|| EnvError::UnknownEnv(env_id.to_string()))
    }

    pub fn builtin_ids() -> &'static [&'static str] {
        &["filesys", "ticketing"]
    }

    pub fn id(&self) -> &str {
        &self.spec.env_id
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn graph(&self) -> &ApiGraph {
        &self.graph
    }

    /// Whether a successful call to `tool` advances the state version.
    pub fn is_mutating(&self, tool: &str) -> bool {
        self.operations
            .get(tool)
            .is_some_and(|op| self.backend.mutating().contains(&op.as_str()))
    }

    /// Seed at which fixtures are used verbatim, with no generated extras.
    pub fn golden_seed(&self) -> u64 {
        self.spec
            .fixtures
            .get("golden_seed")
            .and_then(Json::as_u64)
            .unwrap_or(0)
    }

    fn try_reset(&self, seed: u64) -> Result<EnvState, EnvError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let golden = seed == self.golden_seed();
        let fixtures = &self.spec.fixtures;
        let store = match self.backend {
            Backend::Ticketing => Store::Ticketing(TicketingStore::init(fixtures, golden, &mut rng).map_err(EnvError::Fixture)?),
            Backend::Filesys => Store::Filesys(FilesysStore::init(fixtures, golden, &mut rng).map_err(EnvError::Fixture)?),
        };
        Ok(EnvState {
            env_id: self.spec.env_id.clone(),
            seed,
            store,
            version: 0,
        })
    }

    pub fn reset(&self, seed: u64) -> EnvState {
        self.try_reset(seed).expect("fixtures validated at construction")
    }

    /// Runs one call against `state`, returning the feedback and the
    /// successor state. Errors never change the state.
    pub fn execute(&self, state: &EnvState, call: &ToolCall) -> (EnvFeedback, EnvState) {
        let fail = |code, message: String| (EnvFeedback::error(code, message), state.clone());
        if state.env_id != self.spec.env_id {
            return fail(
                ErrorCode::UnknownTool,
                format!("state belongs to environment {}", state.env_id),
            );
        }
        let Ok(tool) = self.graph.tool(&call.tool) else {
            return fail(ErrorCode::UnknownTool, format!("no tool named {}", call.tool));
        };
        let effective = match check_args(tool, call) {
            Ok(effective) => effective,
            Err(message) => return fail(ErrorCode::ArgType, message),
        };
        let op = &self.operations[&tool.name];
        let result = match &state.store {
            Store::Ticketing(t) => t
                .execute(op, &effective)
                .map(|(payload, next)| (payload, next.map(Store::Ticketing))),
            Store::Filesys(f) => f
                .execute(op, &effective)
                .map(|(payload, next)| (payload, next.map(Store::Filesys))),
        };
        match result {
            Ok((payload, None)) => (EnvFeedback::value(payload), state.clone()),
            Ok((payload, Some(store))) => {
                let next = EnvState {
                    store,
                    version: state.version + 1,
                    ..state.clone()
                };
                (EnvFeedback::value(payload), next)
            }
            Err(message) => fail(ErrorCode::Domain, message),
        }
    }

    /// Draws arguments for `tool` from the live state. Required parameters
    /// are always filled; optional ones with a generator hint are included
    /// half the time; optional ones without a hint are left out.
    pub fn sample_params<R: Rng + ?Sized>(
        &self,
        tool: &ToolSpec,
        state: &EnvState,
        prior: &[TraceStep],
        rng: &mut R,
    ) -> Result<Vec<(String, Value)>, EnvError> {
        let mut args: Vec<(String, Value)> = Vec::new();
        for param in &tool.params {
            let include = param.required || (param.generator_hint.is_some() && rng.random_bool(0.5));
            if !include {
                continue;
            }
            let taken: Vec<Value> = args.iter().map(|(_, v)| v.clone()).collect();
            let value = match &param.generator_hint {
                Some(hint) => hints::generate(hint, &state.store, prior, &taken, rng),
                None => Some(hints::generic(param.kind, rng)),
            };
            match value {
                Some(v) => args.push((param.name.clone(), v)),
                None if param.required => {
                    return Err(EnvError::GenerationExhausted {
                        tool: tool.name.clone(),
                        param: param.name.clone(),
                    })
                }
                None => {}
            }
        }
        Ok(args)
    }

    /// Generates one turn of exactly `calls` successful steps steered toward
    /// `target`. A step whose tool cannot be parameterised or fails to
    /// execute is discarded and that tool is excluded for the rest of the
    /// step; after [`STEP_RETRY_BUDGET`] attempts the turn fails.
    pub fn run_turn<R: Rng + ?Sized>(
        &self,
        start: &EnvState,
        target: &str,
        calls: usize,
        rng: &mut R,
    ) -> Result<(TurnTrace, EnvState), TurnError> {
        let mut trace = TurnTrace {
            target: target.to_string(),
            steps: Vec::with_capacity(calls),
            start_version: start.version,
            end_version: start.version,
            metadata: TraceMetadata::default(),
        };
        let fail = |trace: &mut TurnTrace, step: usize, reason: String| {
            trace.finish_metadata();
            TurnError {
                step,
                reason,
                partial: Box::new(trace.clone()),
            }
        };
        if calls == 0 {
            return Err(fail(&mut trace, 0, "a turn needs at least one call".into()));
        }
        if !self.graph.contains(target) {
            return Err(fail(&mut trace, 0, format!("unknown target tool `{target}`")));
        }

        let mut state = start.clone();
        let mut called = CalledSet::new();
        for step in 0..calls {
            let mut excluded = BTreeSet::new();
            let mut last_failure = String::new();
            let mut accepted = None;
            for attempt in 0..STEP_RETRY_BUDGET {
                let sample = match self.graph.sample_tool_excluding(target, &called, &excluded, rng) {
                    Ok(sample) => sample,
                    Err(e) => {
                        last_failure = e.to_string();
                        break;
                    }
                };
                let tool = self.graph.tool(&sample.tool).expect("sampled from graph");
                let args = match self.sample_params(tool, &state, &trace.steps, rng) {
                    Ok(args) => args,
                    Err(e) => {
                        last_failure = e.to_string();
                        excluded.insert(sample.tool);
                        continue;
                    }
                };
                let call = ToolCall {
                    tool: sample.tool.clone(),
                    args,
                };
                let (feedback, next) = self.execute(&state, &call);
                if feedback.is_error() {
                    last_failure = format!("{} failed: {}", call.render(), feedback.raw_text);
                    excluded.insert(sample.tool);
                    continue;
                }
                accepted = Some((
                    TraceStep {
                        call,
                        feedback,
                        case: sample.case,
                        discarded_attempts: attempt,
                    },
                    next,
                ));
                break;
            }
            match accepted {
                Some((trace_step, next)) => {
                    log::trace!("step {step}: {}", trace_step.call.render());
                    called.insert(trace_step.call.tool.clone());
                    trace.steps.push(trace_step);
                    state = next;
                }
                None => return Err(fail(&mut trace, step, last_failure)),
            }
        }
        trace.end_version = state.version;
        trace.finish_metadata();
        Ok((trace, state))
    }
}

/// Validates arguments against the tool's parameter specs and fills in
/// declared defaults for omitted optional parameters.
fn check_args(tool: &ToolSpec, call: &ToolCall) -> Result<ToolCall, String> {
    let mut effective = ToolCall::new(tool.name.clone());
    for (name, value) in &call.args {
        let Some(param) = tool.param_spec(name) else {
            return Err(format!("{} has no parameter `{name}`", tool.name));
        };
        if matches!(value, Value::Null) && !param.required {
            continue;
        }
        if !param.kind.admits(value) {
            return Err(format!(
                "parameter `{name}` expects {}, got {}",
                param.kind.as_str(),
                value.render()
            ));
        }
    }
    for param in &tool.params {
        match call.get(&param.name) {
            Some(Value::Null) | None if param.required => {
                return Err(format!("missing required parameter `{}`", param.name));
            }
            Some(Value::Null) | None => {
                if let Some(default) = &param.default {
                    effective.args.push((param.name.clone(), default.clone()));
                }
            }
            Some(value) => effective.args.push((param.name.clone(), value.clone())),
        }
    }
    Ok(effective)
}

/// Resets a built-in environment.
pub fn reset(env_id: &str, seed: u64) -> Result<EnvState, EnvError> {
    Ok(Environment::builtin(env_id)?.reset(seed))
}
