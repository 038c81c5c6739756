//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::agents::{AgentEndpointConfig, ReasonerMode};
use crate::chain::{ChainConfig, MAX_CORRECTION_ROUNDS};
use crate::simenv::Environment;
use crate::synthesis::NoiseKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetPolicy {
    /// Each tool once before any repeats.
    #[default]
    UniformWithoutReplacement,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// A built-in environment id; ignored when `env_spec` is set.
    #[serde(default = "default_env_id")]
    pub env_id: String,
    /// Path to an environment specification file.
    #[serde(default)]
    pub env_spec: Option<PathBuf>,
    /// Rounds per trajectory.
    pub rounds: usize,
    /// Calls per round.
    pub calls_per_round: usize,
    pub trajectories: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub target_selection: TargetPolicy,
    #[serde(default)]
    pub backend: BackendKind,
    #[serde(default = "default_reasoner_mode")]
    pub reasoner_mode: ReasonerMode,
    /// Noise kinds to draw from, one per round.
    #[serde(default = "default_noise")]
    pub noise: Vec<NoiseKind>,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub remote: Option<AgentEndpointConfig>,
    /// Bound on concurrent remote requests.
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
}

fn default_env_id() -> String {
    "ticketing".into()
}

fn default_workers() -> usize {
    1
}

fn default_reasoner_mode() -> ReasonerMode {
    ReasonerMode::AlwaysCorrect
}

fn default_noise() -> Vec<NoiseKind> {
    vec![NoiseKind::None]
}

fn default_max_in_flight() -> usize {
    8
}

impl PipelineConfig {
    /// Minimal scripted configuration for a built-in environment.
    pub fn new(env_id: &str, rounds: usize, calls_per_round: usize, trajectories: usize) -> Self {
        Self {
            env_id: env_id.into(),
            env_spec: None,
            rounds,
            calls_per_round,
            trajectories,
            master_seed: 0,
            workers: default_workers(),
            target_selection: TargetPolicy::default(),
            backend: BackendKind::Scripted,
            reasoner_mode: default_reasoner_mode(),
            noise: default_noise(),
            chain: ChainConfig::default(),
            remote: None,
            max_in_flight: default_max_in_flight(),
            output_path: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative spec paths are relative to the config file.
        if let (Some(spec), Some(dir)) = (&cfg.env_spec, path.parent()) {
            if spec.is_relative() {
                cfg.env_spec = Some(dir.join(spec));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: &str| Err(PipelineError::Config(msg.to_string()));
        if self.rounds == 0 {
            return bad("rounds must be at least 1");
        }
        if self.calls_per_round == 0 {
            return bad("calls_per_round must be at least 1");
        }
        if self.trajectories == 0 {
            return bad("trajectories must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.noise.is_empty() {
            return bad("noise must list at least one kind");
        }
        if self.chain.k_max > MAX_CORRECTION_ROUNDS {
            return Err(PipelineError::Config(format!(
                "chain.k_max must not exceed {MAX_CORRECTION_ROUNDS}"
            )));
        }
        if self.backend == BackendKind::Remote {
            match &self.remote {
                Some(remote) => remote.validate().map_err(|e| PipelineError::Config(e.to_string()))?,
                None => return bad("backend = \"remote\" needs a [remote] table"),
            }
        }
        Ok(())
    }

    /// The environment this run synthesizes from.
    pub fn environment(&self) -> Result<Environment, PipelineError> {
        match &self.env_spec {
            Some(path) => {
                let spec = crate::simenv::EnvSpec::from_path(path).map_err(|e| PipelineError::Config(e.to_string()))?;
                Environment::from_spec(spec).map_err(PipelineError::Env)
            }
            None => Environment::builtin(&self.env_id).cloned().map_err(PipelineError::Env),
        }
    }
}
