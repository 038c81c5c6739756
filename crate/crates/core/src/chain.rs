//! Validation of reasoner output against ground truth, and the bounded
//! critique-and-retry loop around it.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::agents::{Agent, AgentError, AgentRole, ChatMessage, Harness};
use crate::apigraph::ToolSpec;
use crate::call::ToolCall;
use crate::callparse::{extract_sections, render_call_list, CallSection};
use crate::simenv::render::render_json;
use crate::synthesis::HardQuery;
use crate::value::Value;

/// Upper bound on correction rounds, so every chain terminates.
pub const MAX_CORRECTION_ROUNDS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationPolicy {
    #[default]
    OrderSensitive,
    OrderInsensitive,
}

impl ValidationPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            ValidationPolicy::OrderSensitive => "order-sensitive",
            ValidationPolicy::OrderInsensitive => "order-insensitive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MismatchKind {
    MissingCall,
    ExtraCall,
    WrongTool,
    WrongArgValue,
    MissingArg,
    ExtraArg,
    /// The output was free text rather than a call list.
    WholeSequence,
}

impl MismatchKind {
    /// Phrase a hint must contain to count as covering this kind.
    pub fn keyword(self) -> &'static str {
        match self {
            MismatchKind::MissingCall => "missing call",
            MismatchKind::ExtraCall => "extra call",
            MismatchKind::WrongTool => "wrong tool",
            MismatchKind::WrongArgValue => "wrong argument value",
            MismatchKind::MissingArg => "missing argument",
            MismatchKind::ExtraArg => "extra argument",
            MismatchKind::WholeSequence => "no function calls",
        }
    }
}

impl fmt::Display for MismatchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// One difference between output and ground truth. `position` indexes the
/// ground truth for missing calls and the output for extra calls; for
/// positional comparisons both coincide.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub position: usize,
    pub kind: MismatchKind,
    /// Tool of the call concerned; the expected one where both exist.
    pub tool: Option<String>,
    pub param: Option<String>,
    pub expected: Option<String>,
    pub actual: Option<String>,
}

impl Mismatch {
    fn new(position: usize, kind: MismatchKind) -> Self {
        Self {
            position,
            kind,
            tool: None,
            param: None,
            expected: None,
            actual: None,
        }
    }

    /// One-line description that contains the kind's keyword.
    pub fn describe(&self) -> String {
        let n = self.position + 1;
        let tool = self.tool.as_deref().unwrap_or("?");
        let param = self.param.as_deref().unwrap_or("?");
        let expected = self.expected.as_deref().unwrap_or("?");
        let actual = self.actual.as_deref().unwrap_or("?");
        match self.kind {
            MismatchKind::WrongTool => {
                format!("call {n}: wrong tool, expected `{tool}` but got `{actual}`")
            }
            MismatchKind::WrongArgValue => {
                format!("call {n} ({tool}): wrong argument value for `{param}`, expected {expected} but got {actual}")
            }
            MismatchKind::MissingArg => {
                format!("call {n} ({tool}): missing argument `{param}`, expected {expected}")
            }
            MismatchKind::ExtraArg => {
                format!("call {n} ({tool}): extra argument `{param}`={actual} should not be passed")
            }
            MismatchKind::MissingCall => format!("missing call to `{tool}` at position {n}"),
            MismatchKind::ExtraCall => format!("extra call `{actual}` at position {n} is not needed"),
            MismatchKind::WholeSequence => {
                "no function calls were produced; the reply was free text instead of a call list".into()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub verdict: Verdict,
    pub mismatches: Vec<Mismatch>,
}

impl ValidationReport {
    fn from_mismatches(mismatches: Vec<Mismatch>) -> Self {
        Self {
            verdict: if mismatches.is_empty() { Verdict::Pass } else { Verdict::Fail },
            mismatches,
        }
    }

    pub fn is_pass(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn kinds(&self) -> Vec<MismatchKind> {
        self.mismatches.iter().map(|m| m.kind).collect()
    }
}

pub fn validate(fc: &CallSection, ground_truth: &[ToolCall], policy: ValidationPolicy) -> ValidationReport {
    match fc {
        CallSection::Calls(calls) => validate_calls(calls, ground_truth, policy),
        CallSection::Reply(text) => {
            let mut m = Mismatch::new(0, MismatchKind::WholeSequence);
            m.expected = Some(render_call_list(ground_truth));
            m.actual = Some(text.clone());
            ValidationReport::from_mismatches(vec![m])
        }
    }
}

pub fn validate_calls(fc: &[ToolCall], ground_truth: &[ToolCall], policy: ValidationPolicy) -> ValidationReport {
    let mismatches = match policy {
        ValidationPolicy::OrderSensitive if fc.len() == ground_truth.len() => ground_truth
            .iter()
            .zip(fc)
            .enumerate()
            .flat_map(|(i, (g, a))| compare_call(i, g, a))
            .collect(),
        ValidationPolicy::OrderSensitive => align(fc, ground_truth),
        ValidationPolicy::OrderInsensitive => multiset_diff(fc, ground_truth),
    };
    ValidationReport::from_mismatches(mismatches)
}

fn compare_call(position: usize, expected: &ToolCall, actual: &ToolCall) -> Vec<Mismatch> {
    let with = |kind: MismatchKind| {
        let mut m = Mismatch::new(position, kind);
        m.tool = Some(expected.tool.clone());
        m
    };
    if expected.tool != actual.tool {
        let mut m = with(MismatchKind::WrongTool);
        m.expected = Some(expected.render());
        m.actual = Some(actual.tool.clone());
        return vec![m];
    }
    let actual_args: BTreeMap<&str, &Value> = actual.args.iter().map(|(k, v)| (k.as_str(), v)).collect();
    let mut out = Vec::new();
    for (name, value) in &expected.args {
        match actual_args.get(name.as_str()) {
            None => {
                let mut m = with(MismatchKind::MissingArg);
                m.param = Some(name.clone());
                m.expected = Some(value.render());
                out.push(m);
            }
            Some(got) if got.render() != value.render() => {
                let mut m = with(MismatchKind::WrongArgValue);
                m.param = Some(name.clone());
                m.expected = Some(value.render());
                m.actual = Some(got.render());
                out.push(m);
            }
            Some(_) => {}
        }
    }
    for (name, value) in &actual.args {
        if expected.get(name).is_none() {
            let mut m = with(MismatchKind::ExtraArg);
            m.param = Some(name.clone());
            m.actual = Some(value.render());
            out.push(m);
        }
    }
    out
}

fn missing_call(position: usize, expected: &ToolCall) -> Mismatch {
    let mut m = Mismatch::new(position, MismatchKind::MissingCall);
    m.tool = Some(expected.tool.clone());
    m.expected = Some(expected.render());
    m
}

fn extra_call(position: usize, actual: &ToolCall) -> Mismatch {
    let mut m = Mismatch::new(position, MismatchKind::ExtraCall);
    m.tool = Some(actual.tool.clone());
    m.actual = Some(actual.render());
    m
}

/// Minimum-cost alignment for sequences of different length. Identical
/// calls cost 0, the same tool with different arguments 1, insertions and
/// deletions 1, a different tool 2 (never cheaper than delete plus insert).
fn align(fc: &[ToolCall], gt: &[ToolCall]) -> Vec<Mismatch> {
    let (n, m) = (gt.len(), fc.len());
    let gk: Vec<String> = gt.iter().map(ToolCall::canonical_key).collect();
    let fk: Vec<String> = fc.iter().map(ToolCall::canonical_key).collect();
    let sub = |i: usize, j: usize| {
        if gk[i] == fk[j] {
            0
        } else if gt[i].tool == fc[j].tool {
            1
        } else {
            2
        }
    };
    let mut cost = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in cost.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in cost[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            cost[i][j] = (cost[i - 1][j - 1] + sub(i - 1, j - 1))
                .min(cost[i - 1][j] + 1)
                .min(cost[i][j - 1] + 1);
        }
    }

    let mut out = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && gk[i - 1] == fk[j - 1] && cost[i][j] == cost[i - 1][j - 1] {
            i -= 1;
            j -= 1;
        } else if i > 0 && cost[i][j] == cost[i - 1][j] + 1 {
            i -= 1;
            out.push(missing_call(i, &gt[i]));
        } else if j > 0 && cost[i][j] == cost[i][j - 1] + 1 {
            j -= 1;
            out.push(extra_call(j, &fc[j]));
        } else {
            i -= 1;
            j -= 1;
            out.extend(compare_call(i, &gt[i], &fc[j]));
        }
    }
    out.reverse();
    out
}

fn multiset_diff(fc: &[ToolCall], gt: &[ToolCall]) -> Vec<Mismatch> {
    let mut unmatched: Vec<Option<String>> = fc.iter().map(|c| Some(c.canonical_key())).collect();
    let mut out = Vec::new();
    for (i, call) in gt.iter().enumerate() {
        let key = call.canonical_key();
        match unmatched.iter_mut().find(|k| k.as_deref() == Some(key.as_str())) {
            Some(slot) => *slot = None,
            None => out.push(missing_call(i, call)),
        }
    }
    for (j, slot) in unmatched.iter().enumerate() {
        if slot.is_some() {
            out.push(extra_call(j, &fc[j]));
        }
    }
    out
}

/// Corrective feedback for one failed attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorFeedback {
    pub mismatches: Vec<Mismatch>,
    pub hint_text: String,
    /// True when the critic's text was replaced by the template.
    pub templated: bool,
}

fn required_keywords(fc: &CallSection, mismatches: &[Mismatch]) -> Vec<&'static str> {
    let mut words: Vec<&'static str> = mismatches.iter().map(|m| m.kind.keyword()).collect();
    if matches!(fc, CallSection::Calls(c) if c.is_empty()) {
        words.push(MismatchKind::WholeSequence.keyword());
    }
    words.sort_unstable();
    words.dedup();
    words
}

fn template_hint(fc: &CallSection, mismatches: &[Mismatch]) -> String {
    let mut text = String::new();
    if matches!(fc, CallSection::Calls(c) if c.is_empty()) {
        text.push_str("No function calls were produced, but the request needs some.\n");
    }
    text.push_str("Your previous call list was not accepted:");
    for m in mismatches {
        text.push_str("\n- ");
        text.push_str(&m.describe());
    }
    text
}

/// Asks the critic for a hint about `report`. The structured part comes from
/// validation; the critic's prose is kept only if it names every mismatch
/// kind present, and the template is used otherwise (including when the
/// critic fails).
pub fn critique(critic: &dyn Agent, fc: &CallSection, report: &ValidationReport) -> ErrorFeedback {
    let attempted = match fc {
        CallSection::Calls(calls) => render_call_list(calls),
        CallSection::Reply(text) => text.clone(),
    };
    let problems: Vec<String> = report.mismatches.iter().map(|m| format!("- {}", m.describe())).collect();
    let messages = [
        ChatMessage::system(AgentRole::Critiquing.system_prompt()),
        ChatMessage::user(format!(
            "Attempted calls:\n{}\n\nProblems found:\n{}",
            if attempted.trim().is_empty() { "(nothing)" } else { &attempted },
            problems.join("\n")
        )),
    ];
    let harness = Harness::Critiquing {
        mismatches: &report.mismatches,
    };
    let required = required_keywords(fc, &report.mismatches);
    let from_agent = match critic.complete(&messages, &harness) {
        Ok(text) => {
            let lower = text.to_lowercase();
            (!text.trim().is_empty() && required.iter().all(|k| lower.contains(k))).then_some(text)
        }
        Err(e) => {
            log::warn!("critic failed, using template: {e}");
            None
        }
    };
    let templated = from_agent.is_none();
    ErrorFeedback {
        mismatches: report.mismatches.clone(),
        hint_text: from_agent.unwrap_or_else(|| template_hint(fc, &report.mismatches)),
        templated,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    #[serde(default = "default_k_max")]
    pub k_max: u32,
    #[serde(default)]
    pub validation_policy: ValidationPolicy,
    #[serde(default)]
    pub include_distractor_tools: usize,
}

fn default_k_max() -> u32 {
    3
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            k_max: default_k_max(),
            validation_policy: ValidationPolicy::default(),
            include_distractor_tools: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttemptOutput {
    pub attempt_index: usize,
    pub cot: String,
    pub fc: CallSection,
    /// The reasoner's text exactly as returned.
    pub raw: String,
}

impl AttemptOutput {
    fn parse(attempt_index: usize, raw: String) -> Self {
        let (cot, fc) = match extract_sections(&raw) {
            Ok(msg) => {
                let fc = match (msg.tool_call, msg.answer) {
                    (Some(section), _) => section,
                    (None, Some(answer)) => CallSection::Reply(answer),
                    (None, None) => CallSection::Reply(String::new()),
                };
                (msg.think.unwrap_or_default(), fc)
            }
            Err(_) => (String::new(), CallSection::Reply(raw.clone())),
        };
        Self {
            attempt_index,
            cot,
            fc,
            raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttemptRecord {
    pub output: AttemptOutput,
    pub report: ValidationReport,
    /// Present for failed attempts that were followed by another one.
    pub feedback: Option<ErrorFeedback>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChainOutcome {
    Retained {
        final_attempt: AttemptOutput,
        history: Vec<AttemptRecord>,
        /// The prompt the passing attempt answered.
        prompt: Vec<ChatMessage>,
    },
    Rejected {
        history: Vec<AttemptRecord>,
    },
}

impl ChainOutcome {
    pub fn history(&self) -> &[AttemptRecord] {
        match self {
            ChainOutcome::Retained { history, .. } | ChainOutcome::Rejected { history } => history,
        }
    }

    pub fn attempts(&self) -> usize {
        self.history().len()
    }

    pub fn is_retained(&self) -> bool {
        matches!(self, ChainOutcome::Retained { .. })
    }
}

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("k_max {0} exceeds the limit of {MAX_CORRECTION_ROUNDS}")]
    TooManyRounds(u32),
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("tool `{0}` from the ground truth is not among the presented tools")]
    MissingSubtool(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

/// One JSON object per line describing each tool's interface.
pub fn tool_catalog<'a>(tools: impl IntoIterator<Item = &'a ToolSpec>) -> String {
    tools
        .into_iter()
        .map(|t| {
            let params: serde_json::Map<String, serde_json::Value> = t
                .params
                .iter()
                .map(|p| {
                    let mut entry = json!({ "type": p.kind.as_str(), "required": p.required });
                    if !p.description.is_empty() {
                        entry["description"] = json!(p.description);
                    }
                    if let Some(default) = &p.default {
                        entry["default"] = default.to_json();
                    }
                    (p.name.clone(), entry)
                })
                .collect();
            render_json(&json!({
                "name": t.name,
                "description": t.description,
                "parameters": params,
                "returns": t.returns.as_str(),
            }))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// The reasoner's opening prompt: system prompt with the presented tools and
/// the composite capability, then the query.
pub fn initial_prompt(query: &HardQuery, adv_desc: &str, subtools: &[ToolSpec]) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(format!(
            "{}\nAvailable tools:\n{}\n\nThe request can be served by this composite capability: {}",
            AgentRole::Reasoning.system_prompt(),
            tool_catalog(subtools),
            adv_desc
        )),
        ChatMessage::user(query.text.clone()),
    ]
}

/// Attempt, validate, critique and retry. Attempt `k + 1` sees exactly one
/// more message than attempt `k`: the hint for attempt `k`. At most
/// `1 + k_max` attempts run, and the result is retained only on a pass.
pub fn guided_chain(
    reasoner: &dyn Agent,
    critic: &dyn Agent,
    query: &HardQuery,
    adv_desc: &str,
    subtools: &[ToolSpec],
    ground_truth: &[ToolCall],
    cfg: &ChainConfig,
) -> Result<ChainOutcome, ChainError> {
    if cfg.k_max > MAX_CORRECTION_ROUNDS {
        return Err(ChainError::TooManyRounds(cfg.k_max));
    }
    if ground_truth.is_empty() {
        return Err(ChainError::EmptyGroundTruth);
    }
    if let Some(absent) = ground_truth.iter().find(|c| !subtools.iter().any(|t| t.name == c.tool)) {
        return Err(ChainError::MissingSubtool(absent.tool.clone()));
    }

    let mut messages = initial_prompt(query, adv_desc, subtools);
    let harness = Harness::Reasoning { ground_truth };
    let mut history: Vec<AttemptRecord> = Vec::new();
    for k in 0..=cfg.k_max as usize {
        let raw = reasoner.complete(&messages, &harness)?;
        let output = AttemptOutput::parse(k, raw);
        let report = validate(&output.fc, ground_truth, cfg.validation_policy);
        log::debug!("attempt {k}: {} mismatch(es)", report.mismatches.len());
        if report.is_pass() {
            history.push(AttemptRecord {
                output: output.clone(),
                report,
                feedback: None,
            });
            return Ok(ChainOutcome::Retained {
                final_attempt: output,
                history,
                prompt: messages,
            });
        }
        let last = k == cfg.k_max as usize;
        let feedback = (!last).then(|| critique(critic, &output.fc, &report));
        if let Some(fb) = &feedback {
            messages.push(ChatMessage::user(fb.hint_text.clone()));
        }
        history.push(AttemptRecord {
            output,
            report,
            feedback,
        });
    }
    Ok(ChainOutcome::Rejected { history })
}
