//! Chat-completions client with bounded concurrency and retry.

use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use rand::Rng;
use serde_json::{json, Value as Json};

use super::{check_request, Agent, AgentEndpointConfig, AgentError, AgentRole, ChatMessage, Harness};

const INITIAL_BACKOFF: Duration = Duration::from_millis(500);
const BODY_EXCERPT_CHARS: usize = 300;

/// Counting semaphore bounding requests in flight across all agents that
/// share it.
#[derive(Debug)]
pub struct InFlightLimit {
    available: Mutex<usize>,
    freed: Condvar,
}

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        Self {
            available: Mutex::new(max.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut available = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *available == 0 {
            available = self.freed.wait(available).unwrap_or_else(|e| e.into_inner());
        }
        *available -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a InFlightLimit);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteAgent {
    role: AgentRole,
    config: AgentEndpointConfig,
    client: reqwest::blocking::Client,
    limit: Arc<InFlightLimit>,
}

enum Failure {
    Retryable(String),
    Fatal(AgentError),
}

impl RemoteAgent {
    pub fn new(role: AgentRole, config: AgentEndpointConfig, limit: Arc<InFlightLimit>) -> Result<Self, AgentError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| AgentError::Config(e.to_string()))?;
        Ok(Self {
            role,
            config,
            client,
            limit,
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, url: &str, key: &str, body: &Json) -> Result<String, Failure> {
        let _permit = self.limit.acquire();
        let response = self
            .client
            .post(url)
            .bearer_auth(key)
            .json(body)
            .send()
            .map_err(|e| {
                if e.is_timeout() || e.is_connect() {
                    Failure::Retryable(describe(&e))
                } else {
                    Failure::Fatal(AgentError::Transport {
                        attempts: 1,
                        message: describe(&e),
                    })
                }
            })?;
        let status = response.status();
        let text = response.text().map_err(|e| Failure::Retryable(describe(&e)))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Failure::Retryable(format!("status {}", status.as_u16())));
        }
        let protocol = || {
            Failure::Fatal(AgentError::Protocol {
                status: status.as_u16(),
                body: text.chars().take(BODY_EXCERPT_CHARS).collect(),
            })
        };
        if !status.is_success() {
            return Err(protocol());
        }
        let parsed: Json = serde_json::from_str(&text).map_err(|_| protocol())?;
        parsed
            .pointer("/choices/0/message/content")
            .and_then(Json::as_str)
            .map(str::to_string)
            .ok_or_else(protocol)
    }
}

/// Error text without the request URL's query or any header material.
fn describe(e: &reqwest::Error) -> String {
    let kind = if e.is_timeout() {
        "timeout"
    } else if e.is_connect() {
        "connection failed"
    } else {
        "request failed"
    };
    match e.url() {
        Some(url) => format!("{kind} ({}://{}{})", url.scheme(), url.host_str().unwrap_or(""), url.path()),
        None => kind.to_string(),
    }
}

impl Agent for RemoteAgent {
    fn role(&self) -> AgentRole {
        self.role
    }

    fn complete(&self, messages: &[ChatMessage], _harness: &Harness<'_>) -> Result<String, AgentError> {
        check_request(messages)?;
        let key = std::env::var(&self.config.api_key_env_var)
            .map_err(|_| AgentError::MissingCredential(self.config.api_key_env_var.clone()))?;
        let url = self.endpoint();
        let body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
        });

        let mut backoff = INITIAL_BACKOFF;
        let mut attempts = 0;
        loop {
            attempts += 1;
            log::debug!("{} agent: POST {url} (attempt {attempts})", self.role);
            match self.attempt(&url, &key, &body) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(AgentError::Transport { message, .. })) => {
                    return Err(AgentError::Transport { attempts, message })
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(message)) => {
                    if attempts > self.config.max_retries {
                        return Err(AgentError::Transport { attempts, message });
                    }
                    let jittered = backoff.mul_f64(rand::rng().random_range(0.5..=1.0));
                    log::warn!("{} agent: {message}; retrying in {jittered:?}", self.role);
                    thread::sleep(jittered);
                    backoff *= 2;
                }
            }
        }
    }
}
