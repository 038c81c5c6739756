//! Python bindings. Structured results cross the boundary as plain dicts and
//! lists built through the `json` module.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};

use trajforge_core::agents::{AgentRole, ReasonerMode, ScriptedAgent};
use trajforge_core::callparse::{self, CallSection};
use trajforge_core::chain::{self, ValidationPolicy, ValidationReport};
use trajforge_core::pipeline::{self, AgentSource, PipelineConfig};
use trajforge_core::simenv::{EnvFeedback, EnvState, Environment, TurnTrace};
use trajforge_core::synthesis::{self, AdvancedTool, Epsilon, NoiseKind};
use trajforge_core::{ToolCall, Value};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &Json) -> PyResult<Bound<'py, PyAny>> {
    PyModule::import(py, "json")?.call_method1("loads", (value.to_string(),))
}

fn from_py(obj: &Bound<'_, PyAny>) -> PyResult<Json> {
    let text: String = PyModule::import(obj.py(), "json")?
        .call_method1("dumps", (obj,))?
        .extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

fn call_json(call: &ToolCall) -> Json {
    let args: serde_json::Map<String, Json> = call.args.iter().map(|(k, v)| (k.clone(), v.to_json())).collect();
    json!({ "tool": call.tool, "args": args })
}

fn call_from_json(value: &Json) -> PyResult<ToolCall> {
    let tool = value
        .get("tool")
        .and_then(Json::as_str)
        .ok_or_else(|| value_err("each call needs a string `tool`"))?;
    let mut call = ToolCall::new(tool);
    if let Some(args) = value.get("args") {
        let args = args.as_object().ok_or_else(|| value_err("`args` must be a dict"))?;
        for (k, v) in args {
            call = call.arg(k.clone(), Value::from_json(v));
        }
    }
    Ok(call)
}

fn feedback_json(feedback: &EnvFeedback) -> Json {
    match feedback.payload() {
        Some(payload) => json!({ "ok": true, "payload": payload, "raw": feedback.raw_text }),
        None => json!({
            "ok": false,
            "error": feedback.error_code().map(|c| c.as_str()),
            "raw": feedback.raw_text,
        }),
    }
}

fn report_json(report: &ValidationReport) -> Json {
    let mismatches: Vec<Json> = report
        .mismatches
        .iter()
        .map(|m| {
            json!({
                "position": m.position,
                "kind": m.kind.keyword(),
                "tool": m.tool,
                "param": m.param,
                "expected": m.expected,
                "actual": m.actual,
                "description": m.describe(),
            })
        })
        .collect();
    json!({ "passed": report.is_pass(), "mismatches": mismatches })
}

fn parse_policy(policy: &str) -> PyResult<ValidationPolicy> {
    serde_json::from_value(Json::String(policy.into())).map_err(|_| value_err(format!("unknown policy `{policy}`")))
}

fn parse_noise(noise: &str) -> PyResult<NoiseKind> {
    serde_json::from_value(Json::String(noise.into())).map_err(|_| value_err(format!("unknown noise kind `{noise}`")))
}

/// Parses a bracketed call list into `[{"tool": ..., "args": {...}}]`.
#[pyfunction]
fn parse_call_list<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    let calls = callparse::parse_call_list(text).map_err(value_err)?;
    to_py(py, &Json::Array(calls.iter().map(call_json).collect()))
}

/// Inverse of `parse_call_list`.
#[pyfunction]
fn render_call_list(calls: &Bound<'_, PyAny>) -> PyResult<String> {
    let Json::Array(items) = from_py(calls)? else {
        return Err(value_err("expected a list of calls"));
    };
    let calls = items.iter().map(call_from_json).collect::<PyResult<Vec<_>>>()?;
    Ok(callparse::render_call_list(&calls))
}

/// Compares a predicted `<tool_call>` body against a ground-truth call list.
/// Text that does not parse as a call list counts as a free-text reply.
#[pyfunction]
#[pyo3(signature = (predicted, ground_truth, policy = "order-sensitive"))]
fn validate<'py>(py: Python<'py>, predicted: &str, ground_truth: &str, policy: &str) -> PyResult<Bound<'py, PyAny>> {
    let gt = callparse::parse_call_list(ground_truth).map_err(value_err)?;
    let fc = match callparse::parse_call_list(predicted) {
        Ok(calls) => CallSection::Calls(calls),
        Err(_) => CallSection::Reply(predicted.to_string()),
    };
    to_py(py, &report_json(&chain::validate(&fc, &gt, parse_policy(policy)?)))
}

#[pyfunction]
fn derive_seed(master: u64, index: u64) -> u64 {
    pipeline::derive_seed(master, index)
}

/// Runs the pipeline from a TOML config string and returns the run report.
#[pyfunction]
#[pyo3(signature = (config, out, seed = None, workers = None))]
fn run_synthesis<'py>(
    py: Python<'py>,
    config: &str,
    out: PathBuf,
    seed: Option<u64>,
    workers: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = PipelineConfig::from_toml(config).map_err(value_err)?;
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    if let Some(workers) = workers {
        cfg.workers = workers;
    }
    let source = AgentSource::for_config(&cfg).map_err(value_err)?;
    let report = py.detach(|| pipeline::run_synthesis(&cfg, &source, &out)).map_err(runtime_err)?;
    let histogram: serde_json::Map<String, Json> =
        report.attempts_histogram.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    to_py(
        py,
        &json!({
            "retained": report.retained,
            "rejected": report.rejected,
            "failed": report.failed,
            "attempts_histogram": histogram,
            "samples_written": report.samples_written,
            "wall_time_secs": report.wall_time.as_secs_f64(),
        }),
    )
}

/// Audits an exported JSONL file; raises on the first problem.
#[pyfunction]
fn audit<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let report = pipeline::audit(&path).map_err(value_err)?;
    to_py(
        py,
        &json!({
            "samples": report.samples,
            "trajectories": report.trajectories,
            "call_turns": report.call_turns,
            "answer_turns": report.answer_turns,
        }),
    )
}

/// Immutable environment state.
#[pyclass(frozen, name = "State")]
struct PyState {
    inner: EnvState,
}

#[pymethods]
impl PyState {
    #[getter]
    fn version(&self) -> u64 {
        self.inner.version
    }

    #[getter]
    fn env_id(&self) -> &str {
        &self.inner.env_id
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }

    fn render(&self) -> String {
        self.inner.render()
    }

    fn __repr__(&self) -> String {
        format!("State(env_id={:?}, version={})", self.inner.env_id, self.inner.version)
    }
}

/// One generated turn: the call trace and the state it left behind.
#[pyclass(frozen, name = "Turn")]
struct PyTurn {
    trace: TurnTrace,
    end: EnvState,
}

#[pymethods]
impl PyTurn {
    #[getter]
    fn target(&self) -> &str {
        &self.trace.target
    }

    #[getter]
    fn target_reached(&self) -> bool {
        self.trace.metadata.target_reached
    }

    /// The calls as call-list text.
    fn calls(&self) -> String {
        callparse::render_call_list(&self.trace.calls())
    }

    fn end_state(&self) -> PyState {
        PyState { inner: self.end.clone() }
    }

    fn steps<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let steps: Vec<Json> = self
            .trace
            .steps
            .iter()
            .map(|s| json!({ "call": call_json(&s.call), "feedback": feedback_json(&s.feedback) }))
            .collect();
        to_py(py, &Json::Array(steps))
    }
}

/// A composite tool abstracted from a turn.
#[pyclass(frozen, name = "AdvancedTool")]
struct PyAdvancedTool {
    inner: AdvancedTool,
}

#[pymethods]
impl PyAdvancedTool {
    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn description(&self) -> &str {
        &self.inner.description
    }

    #[getter]
    fn constituents(&self) -> Vec<String> {
        self.inner.constituents.clone()
    }

    /// Exposed parameters with the values the source turn used.
    fn exposed_args<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let args: serde_json::Map<String, Json> =
            self.inner.exposed_args().into_iter().map(|(k, v)| (k, v.to_json())).collect();
        to_py(py, &Json::Object(args))
    }

    fn spec<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &serde_json::to_value(self.inner.to_tool_spec()).map_err(runtime_err)?)
    }
}

#[pyclass(frozen, name = "Env")]
struct PyEnv {
    inner: Environment,
}

impl PyEnv {
    fn check_state(&self, state: &PyState) -> PyResult<()> {
        if state.inner.env_id != self.inner.id() {
            return Err(value_err(format!(
                "state belongs to `{}`, not `{}`",
                state.inner.env_id,
                self.inner.id()
            )));
        }
        Ok(())
    }
}

#[pymethods]
impl PyEnv {
    /// A built-in environment by id.
    #[new]
    fn new(env_id: &str) -> PyResult<Self> {
        let inner = Environment::builtin(env_id).map_err(value_err)?.clone();
        Ok(Self { inner })
    }

    /// An environment from specification JSON text.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Environment::from_json(text).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn builtin_ids() -> Vec<&'static str> {
        Environment::builtin_ids().to_vec()
    }

    #[getter]
    fn id(&self) -> &str {
        self.inner.id()
    }

    #[getter]
    fn golden_seed(&self) -> u64 {
        self.inner.golden_seed()
    }

    fn tools(&self) -> Vec<String> {
        self.inner.graph().tool_names().map(str::to_string).collect()
    }

    fn reset(&self, seed: u64) -> PyState {
        PyState {
            inner: self.inner.reset(seed),
        }
    }

    /// Executes one call given as call text, e.g. `get_zipcode(city="X")`.
    fn execute<'py>(&self, py: Python<'py>, state: &PyState, call: &str) -> PyResult<(Bound<'py, PyAny>, PyState)> {
        self.check_state(state)?;
        let mut calls = callparse::parse_call_list(&format!("[{call}]")).map_err(value_err)?;
        if calls.len() != 1 {
            return Err(value_err("expected exactly one call"));
        }
        let (feedback, next) = self.inner.execute(&state.inner, &calls.remove(0));
        Ok((to_py(py, &feedback_json(&feedback))?, PyState { inner: next }))
    }

    /// Generates a turn of `calls` steps steering toward `target`.
    fn run_turn(&self, state: &PyState, target: &str, calls: usize, seed: u64) -> PyResult<PyTurn> {
        self.check_state(state)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (trace, end) = self
            .inner
            .run_turn(&state.inner, target, calls, &mut rng)
            .map_err(runtime_err)?;
        Ok(PyTurn { trace, end })
    }

    /// Abstracts a turn into an advanced tool with the offline agent.
    #[pyo3(signature = (turn, seed = 0))]
    fn abstract_tool(&self, turn: &PyTurn, seed: u64) -> PyResult<PyAdvancedTool> {
        let agent = ScriptedAgent::new(AgentRole::Tooling, seed);
        let inner = synthesis::abstract_tool(&agent, &turn.trace, self.inner.graph()).map_err(runtime_err)?;
        Ok(PyAdvancedTool { inner })
    }

    /// A natural-language request for an advanced tool.
    #[pyo3(signature = (tool, noise = "none", seed = 0))]
    fn synthesize_query(&self, tool: &PyAdvancedTool, noise: &str, seed: u64) -> PyResult<String> {
        let agent = ScriptedAgent::new(AgentRole::Querying, seed);
        let eps = Epsilon {
            kind: parse_noise(noise)?,
            seed,
        };
        let query = synthesis::synthesize_query(&agent, &tool.inner, self.inner.graph(), eps).map_err(runtime_err)?;
        Ok(query.text)
    }

    /// Replays an advanced tool from `state`. `args` defaults to the values
    /// of the source turn.
    #[pyo3(signature = (state, tool, args = None))]
    fn replay<'py>(
        &self,
        py: Python<'py>,
        state: &PyState,
        tool: &PyAdvancedTool,
        args: Option<&Bound<'py, PyAny>>,
    ) -> PyResult<(Bound<'py, PyAny>, PyState)> {
        self.check_state(state)?;
        let args = match args {
            None => tool.inner.exposed_args(),
            Some(obj) => {
                let Json::Object(map) = from_py(obj)? else {
                    return Err(value_err("args must be a dict"));
                };
                map.iter().map(|(k, v)| (k.clone(), Value::from_json(v))).collect()
            }
        };
        let (feedback, end) = synthesis::replay(&self.inner, &state.inner, &tool.inner, &args).map_err(runtime_err)?;
        let feedback: Vec<Json> = feedback.iter().map(feedback_json).collect();
        Ok((to_py(py, &Json::Array(feedback))?, PyState { inner: end }))
    }
}

/// Parses a scripted reasoner mode such as `fail-2-times`; returns its
/// canonical spelling.
#[pyfunction]
fn reasoner_mode(mode: &str) -> PyResult<String> {
    mode.parse::<ReasonerMode>().map(String::from).map_err(value_err)
}

#[pymodule]
fn trajforge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(parse_call_list, m)?)?;
    m.add_function(wrap_pyfunction!(render_call_list, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add_function(wrap_pyfunction!(run_synthesis, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    m.add_function(wrap_pyfunction!(reasoner_mode, m)?)?;
    m.add_class::<PyEnv>()?;
    m.add_class::<PyState>()?;
    m.add_class::<PyTurn>()?;
    m.add_class::<PyAdvancedTool>()?;
    Ok(())
}
