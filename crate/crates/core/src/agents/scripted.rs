//! Deterministic stand-ins for the four agents.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_request, Agent, AgentError, AgentRole, ChatMessage, ChatRole, Harness};
use crate::call::ToolCall;
use crate::callparse::render_call_list;
use crate::value::Value;

/// How a scripted reasoner behaves across correction attempts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ReasonerMode {
    AlwaysCorrect,
    /// Perturbs one argument on attempts `0..k`, then answers correctly.
    FailKTimes(u32),
    AlwaysWrong,
}

impl FromStr for ReasonerMode {
    type Err = String;

    /// Accepts `always-correct`, `always-wrong` and `fail-<k>-times`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "always-correct" => Ok(ReasonerMode::AlwaysCorrect),
            "always-wrong" => Ok(ReasonerMode::AlwaysWrong),
            other => other
                .strip_prefix("fail-")
                .and_then(|rest| rest.strip_suffix("-times"))
                .and_then(|k| k.parse().ok())
                .map(ReasonerMode::FailKTimes)
                .ok_or_else(|| format!("unknown reasoner mode {other:?}")),
        }
    }
}

impl TryFrom<String> for ReasonerMode {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ReasonerMode> for String {
    fn from(mode: ReasonerMode) -> String {
        match mode {
            ReasonerMode::AlwaysCorrect => "always-correct".into(),
            ReasonerMode::AlwaysWrong => "always-wrong".into(),
            ReasonerMode::FailKTimes(k) => format!("fail-{k}-times"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    role: AgentRole,
    seed: u64,
    mode: ReasonerMode,
}

impl ScriptedAgent {
    pub fn new(role: AgentRole, seed: u64) -> Self {
        Self {
            role,
            seed,
            mode: ReasonerMode::AlwaysCorrect,
        }
    }

    pub fn reasoner(mode: ReasonerMode, seed: u64) -> Self {
        Self {
            role: AgentRole::Reasoning,
            seed,
            mode,
        }
    }

    pub fn mode(&self) -> ReasonerMode {
        self.mode
    }

    fn missing(&self, needed: &'static str) -> AgentError {
        AgentError::MissingContext {
            role: self.role,
            needed,
        }
    }

    fn reason(&self, messages: &[ChatMessage], ground_truth: &[ToolCall]) -> String {
        if messages.last().is_some_and(|m| m.role == ChatRole::Tool) {
            return format!(
                "<think>\nEvery requested operation has returned a result, so I can report back.\n</think>\n\
                 <answer>\nDone. All {} requested operation(s) completed.\n</answer>",
                ground_truth.len()
            );
        }
        // Messages after the system prompt and the query are correction hints.
        let attempt = messages.len().saturating_sub(2) as u32;
        let wrong = match self.mode {
            ReasonerMode::AlwaysCorrect => false,
            ReasonerMode::FailKTimes(k) => attempt < k,
            ReasonerMode::AlwaysWrong => true,
        };
        let mut calls = ground_truth.to_vec();
        if wrong && !calls.is_empty() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ u64::from(attempt).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let i = rng.random_range(0..calls.len());
            perturb(&mut calls[i], &mut rng);
        }
        let names: Vec<&str> = ground_truth.iter().map(|c| c.tool.as_str()).collect();
        format!(
            "<think>\nThis takes {} call(s), in this order: {}. Each result is passed on where a later call depends on it.\n</think>\n\
             <tool_call>\n{}\n</tool_call>",
            names.len(),
            names.join(", "),
            render_call_list(&calls)
        )
    }
}

/// Changes one argument value, or the tool name when there are no arguments,
/// so the call no longer matches.
fn perturb<R: Rng>(call: &mut ToolCall, rng: &mut R) {
    if call.args.is_empty() {
        call.tool.push_str("_alt");
        return;
    }
    let i = rng.random_range(0..call.args.len());
    let value = &mut call.args[i].1;
    *value = match std::mem::replace(value, Value::Null) {
        Value::Null => Value::Int(0),
        Value::Bool(b) => Value::Bool(!b),
        Value::Int(n) => Value::Int(n.wrapping_add(1)),
        Value::Float(f) if f.is_finite() => Value::Float(f + 1.0),
        Value::Float(_) => Value::Float(0.0),
        Value::Str(s) => Value::Str(format!("{s}_alt")),
        Value::List(mut items) => {
            items.push(Value::Null);
            Value::List(items)
        }
        Value::Object(mut entries) => {
            entries.push(("alt".into(), Value::Null));
            Value::Object(entries)
        }
    };
}

impl Agent for ScriptedAgent {
    fn role(&self) -> AgentRole {
        self.role
    }

    fn complete(&self, messages: &[ChatMessage], harness: &Harness<'_>) -> Result<String, AgentError> {
        check_request(messages)?;
        match (self.role, harness) {
            (AgentRole::Tooling, Harness::Tooling { name, description }) => {
                Ok(format!("Name: {name}\nDescription: {description}"))
            }
            (AgentRole::Tooling, _) => Err(self.missing("tooling")),
            (AgentRole::Querying, Harness::Querying { draft }) => Ok(draft.to_string()),
            (AgentRole::Querying, _) => Err(self.missing("querying")),
            (AgentRole::Reasoning, Harness::Reasoning { ground_truth }) => Ok(self.reason(messages, ground_truth)),
            (AgentRole::Reasoning, _) => Err(self.missing("ground-truth")),
            (AgentRole::Critiquing, Harness::Critiquing { mismatches }) => {
                if mismatches.is_empty() {
                    return Ok("The attempt matches what was asked.".into());
                }
                let mut text = String::from("The last attempt was not accepted.");
                for m in *mismatches {
                    text.push_str("\n- ");
                    text.push_str(&m.describe());
                }
                Ok(text)
            }
            (AgentRole::Critiquing, _) => Err(self.missing("mismatch")),
        }
    }
}
