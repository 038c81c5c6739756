//! The completion contract shared by the four synthesis agents.
//!
//! Every agent is reached through [`Agent::complete`]. The remote backend
//! sends the messages to a chat-completions endpoint; scripted backends are
//! pure functions of their configuration and inputs and additionally read
//! the [`Harness`] side channel, which carries ground truth the prompt must
//! not contain. Remote backends ignore the harness.

mod remote;
mod scripted;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use remote::{InFlightLimit, RemoteAgent};
pub use scripted::{ReasonerMode, ScriptedAgent};

use crate::call::ToolCall;
use crate::chain::Mismatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Tooling,
    Querying,
    Reasoning,
    Critiquing,
}

impl AgentRole {
    pub const ALL: [AgentRole; 4] = [
        AgentRole::Tooling,
        AgentRole::Querying,
        AgentRole::Reasoning,
        AgentRole::Critiquing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Tooling => "tooling",
            AgentRole::Querying => "querying",
            AgentRole::Reasoning => "reasoning",
            AgentRole::Critiquing => "critiquing",
        }
    }

    /// The shipped system prompt for this role.
    pub fn system_prompt(self) -> &'static str {
        match self {
            AgentRole::Tooling => include_str!("../../prompts/tooling.v1.txt"),
            AgentRole::Querying => include_str!("../../prompts/querying.v1.txt"),
            AgentRole::Reasoning => include_str!("../../prompts/reasoning.v1.txt"),
            AgentRole::Critiquing => include_str!("../../prompts/critiquing.v1.txt"),
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
    Tool,
}

impl ChatRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ChatRole::System => "system",
            ChatRole::User => "user",
            ChatRole::Assistant => "assistant",
            ChatRole::Tool => "tool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: ChatRole, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(ChatRole::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(ChatRole::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(ChatRole::Assistant, content)
    }

    pub fn tool(content: impl Into<String>) -> Self {
        Self::new(ChatRole::Tool, content)
    }
}

/// Connection settings for a chat-completions endpoint. The credential
/// itself never appears here, only the name of the variable holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEndpointConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    pub api_key_env_var: String,
}

fn default_temperature() -> f64 {
    0.7
}

fn default_max_retries() -> u32 {
    3
}

fn default_timeout_secs() -> f64 {
    60.0
}

impl AgentEndpointConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |msg: String| Err(AgentError::Config(msg));
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return bad(format!("base_url must be an http(s) URL, got {:?}", self.base_url));
        }
        if self.model.trim().is_empty() {
            return bad("model must not be empty".into());
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad(format!("temperature must lie in [0, 2], got {}", self.temperature));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad(format!("timeout_secs must be positive, got {}", self.timeout_secs));
        }
        if self.api_key_env_var.trim().is_empty() {
            return bad("api_key_env_var must name an environment variable".into());
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("request has no messages")]
    EmptyRequest,
    #[error("the first message must be the system prompt")]
    MissingSystemPrompt,
    #[error("message {0} has empty content")]
    EmptyMessage(usize),
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned status {status}: {body}")]
    Protocol { status: u16, body: String },
    #[error("credential variable `{0}` is not set")]
    MissingCredential(String),
    #[error("scripted {role} agent called without {needed} context")]
    MissingContext { role: AgentRole, needed: &'static str },
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
}

/// Structured inputs for scripted agents. Prompts never contain these.
#[derive(Debug, Clone, Copy, Default)]
pub enum Harness<'a> {
    #[default]
    None,
    Tooling {
        name: &'a str,
        description: &'a str,
    },
    Querying {
        draft: &'a str,
    },
    Reasoning {
        ground_truth: &'a [ToolCall],
    },
    Critiquing {
        mismatches: &'a [Mismatch],
    },
}

pub trait Agent: Send + Sync {
    fn role(&self) -> AgentRole;

    fn complete(&self, messages: &[ChatMessage], harness: &Harness<'_>) -> Result<String, AgentError>;
}

impl<A: Agent + ?Sized> Agent for Arc<A> {
    fn role(&self) -> AgentRole {
        (**self).role()
    }

    fn complete(&self, messages: &[ChatMessage], harness: &Harness<'_>) -> Result<String, AgentError> {
        (**self).complete(messages, harness)
    }
}

impl<A: Agent + ?Sized> Agent for Box<A> {
    fn role(&self) -> AgentRole {
        (**self).role()
    }

    fn complete(&self, messages: &[ChatMessage], harness: &Harness<'_>) -> Result<String, AgentError> {
        (**self).complete(messages, harness)
    }
}

/// Checks the request shape every backend requires.
pub fn check_request(messages: &[ChatMessage]) -> Result<(), AgentError> {
    let first = messages.first().ok_or(AgentError::EmptyRequest)?;
    if first.role != ChatRole::System {
        return Err(AgentError::MissingSystemPrompt);
    }
    if let Some(i) = messages.iter().position(|m| m.content.trim().is_empty()) {
        return Err(AgentError::EmptyMessage(i));
    }
    Ok(())
}

/// One agent per role.
#[derive(Clone)]
pub struct AgentSet {
    pub tooling: Arc<dyn Agent>,
    pub querying: Arc<dyn Agent>,
    pub reasoning: Arc<dyn Agent>,
    pub critiquing: Arc<dyn Agent>,
}

impl AgentSet {
    /// Scripted agents for every role; the reasoner runs in `mode`.
    pub fn scripted(mode: ReasonerMode, seed: u64) -> Self {
        Self {
            tooling: Arc::new(ScriptedAgent::new(AgentRole::Tooling, seed)),
            querying: Arc::new(ScriptedAgent::new(AgentRole::Querying, seed)),
            reasoning: Arc::new(ScriptedAgent::reasoner(mode, seed)),
            critiquing: Arc::new(ScriptedAgent::new(AgentRole::Critiquing, seed)),
        }
    }

    /// Remote agents for every role sharing one endpoint and one in-flight
    /// bound.
    pub fn remote(config: &AgentEndpointConfig, max_in_flight: usize) -> Result<Self, AgentError> {
        let limit = Arc::new(InFlightLimit::new(max_in_flight));
        let make = |role| RemoteAgent::new(role, config.clone(), Arc::clone(&limit)).map(|a| Arc::new(a) as Arc<dyn Agent>);
        Ok(Self {
            tooling: make(AgentRole::Tooling)?,
            querying: make(AgentRole::Querying)?,
            reasoning: make(AgentRole::Reasoning)?,
            critiquing: make(AgentRole::Critiquing)?,
        })
    }
}

impl fmt::Debug for AgentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AgentSet").finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_role_has_a_prompt() {
        for role in AgentRole::ALL {
            assert!(!role.system_prompt().trim().is_empty(), "{role}");
        }
    }

    #[test]
    fn request_shape_is_checked() {
        assert!(matches!(check_request(&[]), Err(AgentError::EmptyRequest)));
        assert!(matches!(
            check_request(&[ChatMessage::user("hi")]),
            Err(AgentError::MissingSystemPrompt)
        ));
        assert!(matches!(
            check_request(&[ChatMessage::system("s"), ChatMessage::user(" ")]),
            Err(AgentError::EmptyMessage(1))
        ));
        assert!(check_request(&[ChatMessage::system("s"), ChatMessage::user("q")]).is_ok());
    }

    #[test]
    fn endpoint_config_validation() {
        let good = AgentEndpointConfig {
            base_url: "http://localhost:8000/v1".into(),
            model: "m".into(),
            temperature: 0.2,
            max_retries: 2,
            timeout_secs: 5.0,
            api_key_env_var: "TRAJFORGE_API_KEY".into(),
        };
        assert!(good.validate().is_ok());
        let hot = AgentEndpointConfig { temperature: 2.5, ..good.clone() };
        assert!(hot.validate().is_err());
        let ftp = AgentEndpointConfig { base_url: "ftp://x".into(), ..good };
        assert!(ftp.validate().is_err());
    }
}
