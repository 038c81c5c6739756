//! Turning a turn trace into one advanced tool and a user query for it.
//!
//! Structure always comes from dataflow analysis over the trace. Agents only
//! contribute prose: the tool's name and description, and the query text,
//! and both are checked before use.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Agent, AgentError, AgentRole, ChatMessage, Harness};
use crate::apigraph::{ApiGraph, ParamKind, ParamSpec, ToolSpec};
use crate::call::ToolCall;
use crate::callparse::quote;
use crate::simenv::{EnvFeedback, EnvState, Environment, TurnTrace};
use crate::value::{is_identifier, Value};

pub const MAX_NAME_LEN: usize = 64;
pub const MAX_DESCRIPTION_LEN: usize = 1000;
/// Extra query generations allowed after the first before falling back.
pub const MAX_QUERY_REGENERATIONS: usize = 3;

/// Where one constituent argument gets its value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Binding {
    /// From the advanced tool's parameter of this name.
    Exposed(String),
    /// From the feedback of an earlier step, whole or one top-level field.
    Internal { step: usize, field: Option<String> },
}

/// Bindings for each constituent call, arguments in call order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BindingMap {
    pub steps: Vec<Vec<(String, Binding)>>,
}

impl BindingMap {
    fn consumed_steps(&self) -> BTreeSet<usize> {
        self.steps
            .iter()
            .flatten()
            .filter_map(|(_, b)| match b {
                Binding::Internal { step, .. } => Some(*step),
                Binding::Exposed(_) => None,
            })
            .collect()
    }
}

/// Result of dataflow analysis: bindings plus the exposed parameters with
/// the values the trace used for them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataflow {
    pub binding_map: BindingMap,
    pub exposed_params: Vec<ParamSpec>,
    pub exposed_values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvancedTool {
    pub name: String,
    pub description: String,
    pub exposed_params: Vec<ParamSpec>,
    /// Values the trace used, parallel to `exposed_params`.
    pub exposed_values: Vec<Value>,
    pub returns: ParamKind,
    pub constituents: Vec<String>,
    pub binding_map: BindingMap,
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace step {0} did not succeed")]
    FailedStep(usize),
    #[error("advanced tool is malformed: {0}")]
    Malformed(String),
    #[error("replay: {0}")]
    Replay(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

fn source_of(value: &Value, earlier: &[EnvFeedback]) -> Option<Binding> {
    let wanted = value.normalized();
    for (step, feedback) in earlier.iter().enumerate() {
        let Some(payload) = feedback.payload_value() else { continue };
        if payload.normalized() == wanted {
            return Some(Binding::Internal { step, field: None });
        }
        if let Value::Object(fields) = &payload {
            if let Some((key, _)) = fields.iter().find(|(_, v)| v.normalized() == wanted) {
                return Some(Binding::Internal {
                    step,
                    field: Some(key.clone()),
                });
            }
        }
    }
    None
}

/// Letter suffixes for repeated base names: A..Z, then A27, A28, ...
fn suffix(i: usize) -> String {
    if i < 26 {
        char::from(b'A' + i as u8).to_string()
    } else {
        format!("A{}", i + 1)
    }
}

/// Binds each argument to the earliest earlier feedback that carries its
/// value, or else to an exposed parameter. Exposed parameters are shared by
/// value and named after the argument, with letter suffixes when one name
/// stands for several values.
pub fn infer_bindings(trace: &TurnTrace, graph: &ApiGraph) -> Dataflow {
    struct Exposed {
        base: String,
        value: Value,
        spec: Option<ParamSpec>,
    }
    let feedback: Vec<EnvFeedback> = trace.steps.iter().map(|s| s.feedback.clone()).collect();
    let mut exposed: Vec<Exposed> = Vec::new();
    let mut by_value: BTreeMap<String, usize> = BTreeMap::new();
    // Internal bindings are final; exposed ones hold an index until named.
    let mut pending: Vec<Vec<(String, Result<Binding, usize>)>> = Vec::new();

    for (i, step) in trace.steps.iter().enumerate() {
        let tool = graph.tool(&step.call.tool).ok();
        let mut row = Vec::new();
        for (arg, value) in &step.call.args {
            let binding = match source_of(value, &feedback[..i]) {
                Some(internal) => Ok(internal),
                None => {
                    let key = value.render();
                    let index = *by_value.entry(key).or_insert_with(|| {
                        exposed.push(Exposed {
                            base: arg.clone(),
                            value: value.clone(),
                            spec: tool.and_then(|t| t.param_spec(arg)).cloned(),
                        });
                        exposed.len() - 1
                    });
                    Err(index)
                }
            };
            row.push((arg.clone(), binding));
        }
        pending.push(row);
    }

    let mut per_base: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in exposed.iter().enumerate() {
        per_base.entry(e.base.as_str()).or_default().push(i);
    }
    let mut names = vec![String::new(); exposed.len()];
    let mut used = BTreeSet::new();
    for (i, e) in exposed.iter().enumerate() {
        let group = &per_base[e.base.as_str()];
        let mut name = if group.len() == 1 {
            e.base.clone()
        } else {
            let rank = group.iter().position(|&j| j == i).expect("member of its group");
            format!("{}{}", e.base, suffix(rank))
        };
        let stem = name.clone();
        let mut n = 2;
        while !used.insert(name.clone()) {
            name = format!("{stem}_{n}");
            n += 1;
        }
        names[i] = name;
    }

    let exposed_params = exposed
        .iter()
        .zip(&names)
        .map(|(e, name)| {
            let kind = e
                .spec
                .as_ref()
                .map(|s| s.kind)
                .or_else(|| e.value.kind())
                .unwrap_or(ParamKind::String);
            let mut spec = ParamSpec::required(name.clone(), kind);
            if let Some(original) = &e.spec {
                spec.generator_hint = original.generator_hint.clone();
                spec.description = original.description.clone();
            }
            spec
        })
        .collect();
    let binding_map = BindingMap {
        steps: pending
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|(arg, b)| (arg, b.unwrap_or_else(|i| Binding::Exposed(names[i].clone()))))
                    .collect()
            })
            .collect(),
    };
    Dataflow {
        binding_map,
        exposed_params,
        exposed_values: exposed.into_iter().map(|e| e.value).collect(),
    }
}

impl AdvancedTool {
    /// Exposed parameter names paired with the trace's values.
    pub fn exposed_args(&self) -> Vec<(String, Value)> {
        self.exposed_params
            .iter()
            .map(|p| p.name.clone())
            .zip(self.exposed_values.iter().cloned())
            .collect()
    }

    /// Checks the structural invariants against the trace it came from.
    pub fn check(&self, trace: &TurnTrace) -> Result<(), SynthesisError> {
        let bad = |msg: String| Err(SynthesisError::Malformed(msg));
        let tools: Vec<&str> = trace.steps.iter().map(|s| s.call.tool.as_str()).collect();
        if self.constituents != tools {
            return bad("constituents differ from the trace's calls".into());
        }
        if self.binding_map.steps.len() != self.constituents.len() {
            return bad("binding map length differs from constituents".into());
        }
        if self.exposed_params.len() != self.exposed_values.len() {
            return bad("exposed params and values differ in length".into());
        }
        let mut names = BTreeSet::new();
        for p in &self.exposed_params {
            if !names.insert(p.name.as_str()) {
                return bad(format!("duplicate exposed parameter {}", p.name));
            }
        }
        let mut referenced = BTreeSet::new();
        for (i, (row, step)) in self.binding_map.steps.iter().zip(&trace.steps).enumerate() {
            let args: Vec<&str> = step.call.args.iter().map(|(a, _)| a.as_str()).collect();
            let bound: Vec<&str> = row.iter().map(|(a, _)| a.as_str()).collect();
            if args != bound {
                return bad(format!("step {i} binds arguments {bound:?}, the call has {args:?}"));
            }
            for (arg, binding) in row {
                match binding {
                    Binding::Internal { step, .. } if *step >= i => {
                        return bad(format!("step {i} argument {arg} reads from step {step}, which is not earlier"))
                    }
                    Binding::Internal { .. } => {}
                    Binding::Exposed(name) => {
                        if !names.contains(name.as_str()) {
                            return bad(format!("step {i} argument {arg} names unknown parameter {name}"));
                        }
                        referenced.insert(name.as_str());
                    }
                }
            }
        }
        if let Some(unused) = names.difference(&referenced).next() {
            return bad(format!("exposed parameter {unused} is never used"));
        }
        if !is_identifier(&self.name) || self.name.len() > MAX_NAME_LEN {
            return bad(format!("name {:?} is not a short identifier", self.name));
        }
        Ok(())
    }

    /// The advanced tool as a plain tool specification.
    pub fn to_tool_spec(&self) -> ToolSpec {
        let mut spec = ToolSpec::new(self.name.clone(), self.returns);
        spec.description = self.description.clone();
        spec.params = self.exposed_params.clone();
        spec.executor = "composite".into();
        spec
    }
}

fn check_trace(trace: &TurnTrace) -> Result<(), SynthesisError> {
    if trace.steps.is_empty() {
        return Err(SynthesisError::EmptyTrace);
    }
    if let Some(i) = trace.steps.iter().position(|s| s.feedback.is_error()) {
        return Err(SynthesisError::FailedStep(i));
    }
    Ok(())
}

fn parse_tool_text(text: &str) -> Option<(String, String)> {
    let mut name = None;
    let mut description = None;
    for line in text.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("Name:") {
            name = Some(rest.trim().trim_matches('`').to_string());
        } else if let Some(rest) = line.strip_prefix("Description:") {
            description = Some(rest.trim().to_string());
        }
    }
    let (name, description) = (name?, description?);
    let usable = is_identifier(&name)
        && name.len() <= MAX_NAME_LEN
        && !description.is_empty()
        && description.chars().count() <= MAX_DESCRIPTION_LEN;
    usable.then_some((name, description))
}

/// Builds the advanced tool for a trace. The tooling agent proposes a name
/// and description; unusable text falls back to `<target>_adv` and a
/// templated description.
pub fn abstract_tool(agent: &dyn Agent, trace: &TurnTrace, graph: &ApiGraph) -> Result<AdvancedTool, SynthesisError> {
    check_trace(trace)?;
    let df = infer_bindings(trace, graph);
    let constituents: Vec<String> = trace.steps.iter().map(|s| s.call.tool.clone()).collect();
    let last = constituents.last().expect("non-empty trace");
    let returns = graph.tool(last).map(|t| t.returns).unwrap_or(ParamKind::Object);
    let anchor = if trace.metadata.target_reached { &trace.target } else { last };
    let fallback_name = format!("{anchor}_adv");
    let inputs = if df.exposed_params.is_empty() {
        "no inputs".to_string()
    } else {
        df.exposed_params
            .iter()
            .map(|p| format!("{} ({})", p.name, p.kind.as_str()))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let fallback_description = format!(
        "Runs {} as one operation. Takes {inputs} and returns the {} produced by the final {last} step.",
        constituents.join(" then "),
        returns.as_str()
    );

    let steps: Vec<String> = trace
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {} -> {}", i + 1, s.call.render(), s.feedback.raw_text))
        .collect();
    let messages = [
        ChatMessage::system(AgentRole::Tooling.system_prompt()),
        ChatMessage::user(format!(
            "Calls:\n{}\n\nInputs: {inputs}\nReturns: {}",
            steps.join("\n"),
            returns.as_str()
        )),
    ];
    let harness = Harness::Tooling {
        name: &fallback_name,
        description: &fallback_description,
    };
    let text = agent.complete(&messages, &harness)?;
    let (name, description) = parse_tool_text(&text).unwrap_or_else(|| {
        log::debug!("tooling agent text unusable, using template");
        (fallback_name.clone(), fallback_description.clone())
    });

    let tool = AdvancedTool {
        name,
        description,
        exposed_params: df.exposed_params,
        exposed_values: df.exposed_values,
        returns,
        constituents,
        binding_map: df.binding_map,
    };
    tool.check(trace)?;
    Ok(tool)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    None,
    /// Picks an alternative phrasing from a fixed bank.
    Paraphrase,
    /// Appends an irrelevant sentence.
    Distractor,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::Paraphrase => "paraphrase",
            NoiseKind::Distractor => "distractor",
        }
    }
}

/// Noise selection for query synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Epsilon {
    pub kind: NoiseKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardQuery {
    pub text: String,
    pub adv_tool: String,
    pub noise_seed: u64,
    pub noise_kind: NoiseKind,
}

const PARAPHRASES: &[&str] = &[
    "Could you {}?",
    "I would like you to {}.",
    "Can you {} for me?",
    "I need you to {}.",
    "Go ahead and {}.",
];

const DISTRACTORS: &[&str] = &[
    "There is no rush on this.",
    "A colleague asked me about this earlier today.",
    "I will be offline for a while afterwards.",
    "This is for a report I am putting together.",
    "Nothing else needs to change.",
];

fn literal(value: &Value) -> String {
    match value {
        Value::Str(s) => quote(s),
        other => other.render(),
    }
}

fn spaced(name: &str) -> String {
    name.replace('_', " ")
}

/// Text pieces of a `{param}` template, alternating literal text and
/// placeholder names.
fn placeholders(template: &str) -> Vec<(bool, &str)> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else { break };
        out.push((false, &rest[..open]));
        out.push((true, &rest[open + 1..open + close]));
        rest = &rest[open + close + 1..];
    }
    out.push((false, rest));
    out
}

struct Phraser<'a> {
    adv: &'a AdvancedTool,
    graph: &'a ApiGraph,
    values: BTreeMap<&'a str, &'a Value>,
}

impl Phraser<'_> {
    fn binding(&self, arg: &str, binding: &Binding) -> String {
        match binding {
            Binding::Exposed(name) => self.values.get(name.as_str()).map(|v| literal(v)).unwrap_or_else(|| name.clone()),
            Binding::Internal { step, .. } => self
                .phrase(*step, false)
                .unwrap_or_else(|| format!("the {} obtained earlier", spaced(arg))),
        }
    }

    /// Renders step `i`'s intent (what it does) or referent (what it
    /// produces). Arguments the template leaves out are appended.
    fn phrase(&self, i: usize, intent: bool) -> Option<String> {
        let tool = self.graph.tool(&self.adv.constituents[i]).ok();
        let template = tool.and_then(|t| if intent { t.intent.as_ref() } else { t.referent.as_ref() });
        let row = &self.adv.binding_map.steps[i];
        let mut covered = BTreeSet::new();
        let mut text = match template {
            Some(template) => {
                let mut text = String::new();
                for (is_name, piece) in placeholders(template) {
                    if !is_name {
                        text.push_str(piece);
                        continue;
                    }
                    covered.insert(piece);
                    match row.iter().find(|(arg, _)| arg == piece) {
                        Some((arg, binding)) => text.push_str(&self.binding(arg, binding)),
                        None => match tool.and_then(|t| t.param_spec(piece)).and_then(|p| p.default.as_ref()) {
                            Some(default) => text.push_str(&literal(default)),
                            None => text.push_str("the default"),
                        },
                    }
                }
                text
            }
            None if intent => "complete the requested operation".to_string(),
            None => return None,
        };
        for (arg, binding) in row {
            if !covered.contains(arg.as_str()) {
                text.push_str(&format!(", with {} set to {}", spaced(arg), self.binding(arg, binding)));
            }
        }
        Some(text)
    }

    /// Intents of the steps whose output nothing consumes, in order.
    fn clause(&self) -> String {
        let consumed = self.adv.binding_map.consumed_steps();
        (0..self.adv.constituents.len())
            .filter(|i| !consumed.contains(i))
            .filter_map(|i| self.phrase(i, true))
            .collect::<Vec<_>>()
            .join(", and then ")
    }
}

/// The noise-free templated request for an advanced tool.
pub fn draft_query(adv: &AdvancedTool, graph: &ApiGraph) -> String {
    format!("Please {}.", clause(adv, graph))
}

fn clause(adv: &AdvancedTool, graph: &ApiGraph) -> String {
    let phraser = Phraser {
        adv,
        graph,
        values: adv
            .exposed_params
            .iter()
            .map(|p| p.name.as_str())
            .zip(adv.exposed_values.iter())
            .collect(),
    };
    phraser.clause()
}

fn noisy_draft(adv: &AdvancedTool, graph: &ApiGraph, eps: Epsilon) -> String {
    let clause = clause(adv, graph);
    let mut rng = ChaCha8Rng::seed_from_u64(eps.seed);
    match eps.kind {
        NoiseKind::None => format!("Please {clause}."),
        NoiseKind::Paraphrase => {
            let template = PARAPHRASES.choose(&mut rng).copied().unwrap_or("Please {}.");
            template.replacen("{}", &clause, 1)
        }
        NoiseKind::Distractor => {
            let extra = DISTRACTORS.choose(&mut rng).copied().unwrap_or_default();
            format!("Please {clause}. {extra}")
        }
    }
}

/// Whether `text` contains any constituent tool name as a whole token.
pub fn leaks_tool_name(text: &str, constituents: &[String]) -> bool {
    text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .any(|token| constituents.iter().any(|t| t == token))
}

/// Whether `text` mentions every exposed value.
pub fn mentions_values(text: &str, adv: &AdvancedTool) -> bool {
    adv.exposed_values.iter().all(|v| match v {
        Value::Str(s) => text.contains(s.as_str()),
        other => text.contains(&other.render()),
    })
}

/// Writes the request for `adv`. The querying agent rewrites a noisy draft;
/// output that names a constituent tool or drops an exposed value is
/// regenerated up to [`MAX_QUERY_REGENERATIONS`] times before the noise-free
/// template is used instead.
pub fn synthesize_query(
    agent: &dyn Agent,
    adv: &AdvancedTool,
    graph: &ApiGraph,
    eps: Epsilon,
) -> Result<HardQuery, SynthesisError> {
    let draft = noisy_draft(adv, graph, eps);
    let mut messages = vec![
        ChatMessage::system(AgentRole::Querying.system_prompt()),
        ChatMessage::user(format!("Capability: {}\nDraft request: {draft}", adv.description)),
    ];
    let harness = Harness::Querying { draft: &draft };
    let acceptable = |t: &str| !t.trim().is_empty() && !leaks_tool_name(t, &adv.constituents) && mentions_values(t, adv);
    let mut text = None;
    for attempt in 0..=MAX_QUERY_REGENERATIONS {
        let candidate = agent.complete(&messages, &harness)?.trim().to_string();
        if acceptable(&candidate) {
            text = Some(candidate);
            break;
        }
        log::debug!("query attempt {attempt} rejected");
        messages.push(ChatMessage::assistant(if candidate.is_empty() { "(empty)".to_string() } else { candidate }));
        messages.push(ChatMessage::user(
            "That version names an underlying tool or leaves out a quoted value. Write it again.",
        ));
    }
    let text = text.unwrap_or_else(|| draft_query(adv, graph));
    Ok(HardQuery {
        text,
        adv_tool: adv.name.clone(),
        noise_seed: eps.seed,
        noise_kind: eps.kind,
    })
}

fn coerce(value: Value, kind: Option<ParamKind>) -> Value {
    match (kind, value) {
        (Some(ParamKind::String), Value::Str(s)) => Value::Str(s),
        (Some(ParamKind::String), other) => Value::Str(other.normalized()),
        (Some(ParamKind::Integer), Value::Str(s)) => s.trim().parse().map(Value::Int).unwrap_or(Value::Str(s)),
        (Some(ParamKind::Float), Value::Str(s)) => s.trim().parse().map(Value::Float).unwrap_or(Value::Str(s)),
        (_, other) => other,
    }
}

/// Executes the constituents from `start`, feeding `args` into exposed
/// bindings and earlier feedback into internal ones.
pub fn replay(
    env: &Environment,
    start: &EnvState,
    adv: &AdvancedTool,
    args: &[(String, Value)],
) -> Result<(Vec<EnvFeedback>, EnvState), SynthesisError> {
    let mut state = start.clone();
    let mut feedback: Vec<EnvFeedback> = Vec::with_capacity(adv.constituents.len());
    for (i, (tool, row)) in adv.constituents.iter().zip(&adv.binding_map.steps).enumerate() {
        let spec = env.graph().tool(tool).ok();
        let mut call = ToolCall::new(tool.clone());
        for (arg, binding) in row {
            let value = match binding {
                Binding::Exposed(name) => args
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, v)| v.clone())
                    .ok_or_else(|| SynthesisError::Replay(format!("no value for exposed parameter {name}")))?,
                Binding::Internal { step, field } => {
                    let payload = feedback
                        .get(*step)
                        .and_then(EnvFeedback::payload_value)
                        .ok_or_else(|| SynthesisError::Replay(format!("step {i} reads step {step}, which has no value")))?;
                    match (field, payload) {
                        (None, whole) => whole,
                        (Some(key), Value::Object(fields)) => fields
                            .into_iter()
                            .find(|(k, _)| k == key)
                            .map(|(_, v)| v)
                            .ok_or_else(|| SynthesisError::Replay(format!("step {step} has no field {key}")))?,
                        (Some(key), _) => return Err(SynthesisError::Replay(format!("step {step} has no field {key}"))),
                    }
                }
            };
            let kind = spec.and_then(|s| s.param_spec(arg)).map(|p| p.kind);
            call.args.push((arg.clone(), coerce(value, kind)));
        }
        let (fb, next) = env.execute(&state, &call);
        feedback.push(fb);
        state = next;
    }
    Ok((feedback, state))
}
