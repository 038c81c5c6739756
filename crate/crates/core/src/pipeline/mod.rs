//! Multi-round trajectories: build, split into training samples, export,
//! and audit.
//!
//! A trajectory runs `rounds` rounds against one environment whose state
//! carries over between rounds. Each round samples a turn trace, abstracts
//! it, writes the query and runs the guided chain. If any round's chain is
//! rejected, the whole trajectory is rejected.

mod config;
mod export;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{BackendKind, PipelineConfig, TargetPolicy};
pub use export::{audit, export_jsonl, read_jsonl, AuditError, AuditReport};

use crate::agents::{AgentError, AgentRole, AgentSet, ChatMessage, ChatRole, Harness};
use crate::apigraph::{ApiGraph, ToolSpec};
use crate::call::ToolCall;
use crate::callparse::{extract_sections, render_call_list, render_tool_response, CallSection, TaggedMessage};
use crate::chain::{guided_chain, tool_catalog, ChainError, ChainOutcome, ValidationPolicy};
use crate::simenv::{EnvError, Environment, TurnError};
use crate::synthesis::{abstract_tool, synthesize_query, Epsilon, HardQuery, SynthesisError};

/// Seed for item `index` of a run, mixed so neighbouring indices diverge.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Picks the next round's target tool.
pub fn select_target<R: rand::Rng + ?Sized>(
    graph: &ApiGraph,
    history: &[String],
    policy: TargetPolicy,
    rng: &mut R,
) -> String {
    let all: Vec<&str> = graph.tool_names().collect();
    let fresh: Vec<&str> = all.iter().copied().filter(|t| !history.iter().any(|h| h == t)).collect();
    let pool = match policy {
        TargetPolicy::UniformWithoutReplacement if !fresh.is_empty() => &fresh,
        _ => &all,
    };
    pool.choose(rng).expect("graphs are never empty").to_string()
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("trajectory {trajectory}: agent backend unavailable: {source}")]
    Transport {
        trajectory: usize,
        #[source]
        source: AgentError,
    },
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Error)]
pub enum RoundFailure {
    #[error(transparent)]
    Turn(#[from] TurnError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("answer turn has no <answer> section")]
    MissingAnswer,
}

impl RoundFailure {
    fn agent_error(self) -> Result<AgentError, Self> {
        match self {
            RoundFailure::Agent(e)
            | RoundFailure::Synthesis(SynthesisError::Agent(e))
            | RoundFailure::Chain(ChainError::Agent(e)) => Ok(e),
            other => Err(other),
        }
    }
}

#[derive(Debug, Error)]
#[error("trajectory {trajectory_id} round {round}: {failure}")]
pub struct TrajectoryError {
    pub trajectory_id: String,
    pub round: usize,
    pub failure: RoundFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TurnKind {
    Call,
    Answer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub target: String,
    pub query: HardQuery,
    pub adv_tool: String,
    pub ground_truth: Vec<ToolCall>,
    pub final_calls: Vec<ToolCall>,
    pub attempts: usize,
    pub tool_response: String,
    pub start_version: u64,
    pub end_version: u64,
}

/// Role annotation for one assistant message of a transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssistantTurn {
    pub message_index: usize,
    pub round: usize,
    pub kind: TurnKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub trajectory_id: String,
    pub seed: u64,
    pub rounds: Vec<Round>,
    pub messages: Vec<ChatMessage>,
    pub assistant_turns: Vec<AssistantTurn>,
    pub validation_policy: ValidationPolicy,
    pub final_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedTrajectory {
    pub trajectory_id: String,
    pub round: usize,
    /// Attempts used by each round up to and including the rejected one.
    pub attempts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryOutcome {
    Retained(Trajectory),
    Rejected(RejectedTrajectory),
}

/// System message of every exported transcript.
pub fn transcript_system_prompt(graph: &ApiGraph) -> String {
    format!(
        "{}\nAvailable tools:\n{}",
        AgentRole::Reasoning.system_prompt(),
        tool_catalog(graph.tools())
    )
}

pub fn trajectory_id(env_id: &str, index: usize) -> String {
    format!("{env_id}-{index:06}")
}

/// Constituent tools plus `extra` distractors from the rest of the graph,
/// in name order.
fn presented_tools<R: rand::Rng + ?Sized>(graph: &ApiGraph, constituents: &[String], extra: usize, rng: &mut R) -> Vec<ToolSpec> {
    let others: Vec<&ToolSpec> = graph.tools().filter(|t| !constituents.contains(&t.name)).collect();
    let mut chosen: Vec<&ToolSpec> = graph.tools().filter(|t| constituents.contains(&t.name)).collect();
    chosen.extend(others.choose_multiple(rng, extra.min(others.len())).copied());
    chosen.sort_by(|a, b| a.name.cmp(&b.name));
    chosen.into_iter().cloned().collect()
}

/// Builds trajectory `index` with `seed`. Environment state persists across
/// rounds; the first rejected chain rejects the trajectory.
pub fn build_trajectory(
    cfg: &PipelineConfig,
    env: &Environment,
    agents: &AgentSet,
    index: usize,
    seed: u64,
) -> Result<TrajectoryOutcome, TrajectoryError> {
    let graph = env.graph();
    let id = trajectory_id(env.id(), index);
    let fail = |round, failure: RoundFailure| TrajectoryError {
        trajectory_id: id.clone(),
        round,
        failure,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = env.reset(seed);
    let mut targets: Vec<String> = Vec::new();
    let mut messages = vec![ChatMessage::system(transcript_system_prompt(graph))];
    let mut assistant_turns = Vec::new();
    let mut rounds: Vec<Round> = Vec::new();

    for r in 0..cfg.rounds {
        let target = select_target(graph, &targets, cfg.target_selection, &mut rng);
        targets.push(target.clone());
        let start = state.clone();
        let (trace, _) = env
            .run_turn(&start, &target, cfg.calls_per_round, &mut rng)
            .map_err(|e| fail(r, e.into()))?;
        let adv = abstract_tool(agents.tooling.as_ref(), &trace, graph).map_err(|e| fail(r, e.into()))?;
        let noise_seed = derive_seed(seed, r as u64);
        let kind = *cfg.noise.choose(&mut rng).expect("validated non-empty");
        let query = synthesize_query(agents.querying.as_ref(), &adv, graph, Epsilon { kind, seed: noise_seed })
            .map_err(|e| fail(r, e.into()))?;
        let ground_truth = trace.calls();
        let subtools = presented_tools(graph, &adv.constituents, cfg.chain.include_distractor_tools, &mut rng);
        let outcome = guided_chain(
            agents.reasoning.as_ref(),
            agents.critiquing.as_ref(),
            &query,
            &adv.description,
            &subtools,
            &ground_truth,
            &cfg.chain,
        )
        .map_err(|e| fail(r, e.into()))?;
        let attempts = outcome.attempts();
        let final_attempt = match outcome {
            ChainOutcome::Retained { final_attempt, .. } => final_attempt,
            ChainOutcome::Rejected { .. } => {
                let mut all: Vec<usize> = rounds.iter().map(|x| x.attempts).collect();
                all.push(attempts);
                return Ok(TrajectoryOutcome::Rejected(RejectedTrajectory {
                    trajectory_id: id,
                    round: r,
                    attempts: all,
                }));
            }
        };
        let CallSection::Calls(final_calls) = final_attempt.fc else {
            unreachable!("a passing attempt is a call list");
        };

        let mut responses = Vec::with_capacity(final_calls.len());
        for call in &final_calls {
            let (fb, next) = env.execute(&state, call);
            responses.push(fb.raw_text);
            state = next;
        }
        let tool_response = render_tool_response(final_calls.iter().zip(responses.iter().map(String::as_str)));

        messages.push(ChatMessage::user(query.text.clone()));
        let call_turn = TaggedMessage {
            think: Some(final_attempt.cot.clone()).filter(|c| !c.is_empty()),
            tool_call: Some(CallSection::Calls(final_calls.clone())),
            answer: None,
        };
        assistant_turns.push(AssistantTurn {
            message_index: messages.len(),
            round: r,
            kind: TurnKind::Call,
        });
        messages.push(ChatMessage::assistant(call_turn.render()));
        messages.push(ChatMessage::tool(tool_response.clone()));

        let harness = Harness::Reasoning {
            ground_truth: &ground_truth,
        };
        let answer_raw = agents.reasoning.complete(&messages, &harness).map_err(|e| fail(r, e.into()))?;
        let answer = extract_sections(&answer_raw)
            .ok()
            .filter(|m| m.answer.is_some())
            .ok_or_else(|| fail(r, RoundFailure::MissingAnswer))?;
        let answer_turn = TaggedMessage {
            think: answer.think,
            tool_call: None,
            answer: answer.answer,
        };
        assistant_turns.push(AssistantTurn {
            message_index: messages.len(),
            round: r,
            kind: TurnKind::Answer,
        });
        messages.push(ChatMessage::assistant(answer_turn.render()));

        rounds.push(Round {
            target,
            query,
            adv_tool: adv.name,
            ground_truth,
            final_calls,
            attempts,
            tool_response,
            start_version: start.version,
            end_version: state.version,
        });
    }

    Ok(TrajectoryOutcome::Retained(Trajectory {
        trajectory_id: id,
        seed,
        rounds,
        messages,
        assistant_turns,
        validation_policy: cfg.chain.validation_policy,
        final_digest: state.digest(),
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub trajectory_id: String,
    pub round: usize,
    pub assistant_index: usize,
    pub turn_kind: TurnKind,
    /// Ground-truth call list of the round, on call turns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    pub validation_policy: ValidationPolicy,
    pub system_prompt_included: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub messages: Vec<ChatMessage>,
    pub supervised_span: String,
    pub metadata: SampleMetadata,
}

/// One sample per assistant message: the transcript prefix ending at it.
pub fn split_training_samples(traj: &Trajectory) -> Vec<TrainingSample> {
    traj.assistant_turns
        .iter()
        .enumerate()
        .map(|(i, turn)| {
            let messages = traj.messages[..=turn.message_index].to_vec();
            let supervised_span = messages.last().expect("non-empty prefix").content.clone();
            TrainingSample {
                messages,
                supervised_span,
                metadata: SampleMetadata {
                    trajectory_id: traj.trajectory_id.clone(),
                    round: turn.round,
                    assistant_index: i,
                    turn_kind: turn.kind,
                    ground_truth: (turn.kind == TurnKind::Call)
                        .then(|| render_call_list(&traj.rounds[turn.round].ground_truth)),
                    validation_policy: traj.validation_policy,
                    system_prompt_included: true,
                },
            }
        })
        .collect()
}

/// Where agents come from for each trajectory.
#[derive(Debug, Clone)]
pub enum AgentSource {
    /// Fresh scripted agents seeded per trajectory.
    Scripted(crate::agents::ReasonerMode),
    /// One shared set, e.g. remote clients.
    Shared(AgentSet),
}

impl AgentSource {
    pub fn for_config(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        match cfg.backend {
            BackendKind::Scripted => Ok(AgentSource::Scripted(cfg.reasoner_mode)),
            BackendKind::Remote => {
                let remote = cfg
                    .remote
                    .as_ref()
                    .ok_or_else(|| PipelineError::Config("backend = \"remote\" needs a [remote] table".into()))?;
                AgentSet::remote(remote, cfg.max_in_flight)
                    .map(AgentSource::Shared)
                    .map_err(|e| PipelineError::Config(e.to_string()))
            }
        }
    }

    fn agents(&self, seed: u64) -> AgentSet {
        match self {
            AgentSource::Scripted(mode) => AgentSet::scripted(*mode, seed),
            AgentSource::Shared(set) => set.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub retained: usize,
    pub rejected: usize,
    /// Trajectories that failed with an error, with the message.
    pub failed: Vec<(String, String)>,
    /// Chain attempts per round, over retained and rejected trajectories.
    pub attempts_histogram: BTreeMap<usize, usize>,
    pub samples_written: usize,
    pub wall_time: Duration,
}

/// Builds all trajectories on a pool of `cfg.workers` threads and writes
/// retained samples to `out` in trajectory order. Agent transport failures
/// abort the run before anything is written.
pub fn run_synthesis(cfg: &PipelineConfig, source: &AgentSource, out: &std::path::Path) -> Result<RunReport, PipelineError> {
    let started = Instant::now();
    cfg.validate()?;
    let env = cfg.environment()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let results: Vec<Result<TrajectoryOutcome, TrajectoryError>> = pool.install(|| {
        (0..cfg.trajectories)
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(cfg.master_seed, i as u64);
                build_trajectory(cfg, &env, &source.agents(seed), i, seed)
            })
            .collect()
    });

    let mut report = RunReport {
        retained: 0,
        rejected: 0,
        failed: Vec::new(),
        attempts_histogram: BTreeMap::new(),
        samples_written: 0,
        wall_time: Duration::ZERO,
    };
    let mut samples = Vec::new();
    for (i, result) in results.into_iter().enumerate() {
        match result {
            Ok(TrajectoryOutcome::Retained(traj)) => {
                report.retained += 1;
                for round in &traj.rounds {
                    *report.attempts_histogram.entry(round.attempts).or_default() += 1;
                }
                samples.extend(split_training_samples(&traj));
            }
            Ok(TrajectoryOutcome::Rejected(rej)) => {
                report.rejected += 1;
                for a in rej.attempts {
                    *report.attempts_histogram.entry(a).or_default() += 1;
                }
            }
            Err(e) => {
                let id = e.trajectory_id.clone();
                match e.failure.agent_error() {
                    Ok(source @ (AgentError::Transport { .. } | AgentError::MissingCredential(_))) => {
                        return Err(PipelineError::Transport { trajectory: i, source })
                    }
                    Ok(other) => report.failed.push((id, other.to_string())),
                    Err(other) => report.failed.push((id, other.to_string())),
                }
            }
        }
    }
    report.samples_written = export_jsonl(&samples, out)?;
    report.wall_time = started.elapsed();
    Ok(report)
}

/// Roles must run system, then per round user, assistant, (tool, assistant)*.
pub fn transcript_is_legal(messages: &[ChatMessage]) -> bool {
    let Some((first, rest)) = messages.split_first() else { return false };
    if first.role != ChatRole::System {
        return false;
    }
    let mut prev = ChatRole::System;
    for m in rest {
        let ok = match m.role {
            ChatRole::User => matches!(prev, ChatRole::System | ChatRole::Assistant),
            ChatRole::Assistant => matches!(prev, ChatRole::User | ChatRole::Tool),
            ChatRole::Tool => prev == ChatRole::Assistant,
            ChatRole::System => false,
        };
        if !ok {
            return false;
        }
        prev = m.role;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::ReasonerMode;

    #[test]
    fn seeds_differ_by_index_and_master() {
        let a: Vec<u64> = (0..100).map(|i| derive_seed(1, i)).collect();
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 100);
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }

    #[test]
    fn targets_exhaust_before_repeating() {
        let env = Environment::builtin("ticketing").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut history = Vec::new();
        for _ in 0..env.graph().len() {
            let t = select_target(env.graph(), &history, TargetPolicy::UniformWithoutReplacement, &mut rng);
            assert!(!history.contains(&t));
            history.push(t);
        }
        let t = select_target(env.graph(), &history, TargetPolicy::UniformWithoutReplacement, &mut rng);
        assert!(history.contains(&t));
    }

    #[test]
    fn single_tool_graph_always_targets_it() {
        let g = ApiGraph::new([ToolSpec::new("only", crate::ParamKind::String)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut history = Vec::new();
        for _ in 0..3 {
            let t = select_target(&g, &history, TargetPolicy::UniformWithoutReplacement, &mut rng);
            assert_eq!(t, "only");
            history.push(t);
        }
    }

    #[test]
    fn trajectory_shape() {
        let cfg = PipelineConfig::new("filesys", 2, 3, 1);
        let env = Environment::builtin("filesys").unwrap();
        let agents = AgentSet::scripted(ReasonerMode::AlwaysCorrect, 1);
        let TrajectoryOutcome::Retained(traj) = build_trajectory(&cfg, env, &agents, 0, 1).unwrap() else {
            panic!("rejected")
        };
        assert_eq!(traj.rounds.len(), 2);
        assert_eq!(traj.messages.len(), 1 + 2 * 4);
        assert!(transcript_is_legal(&traj.messages));
        assert_eq!(traj.rounds[1].start_version, traj.rounds[0].end_version);
        let samples = split_training_samples(&traj);
        assert_eq!(samples.len(), 4);
        for s in &samples {
            assert_eq!(s.messages.last().unwrap().role, ChatRole::Assistant);
            assert_eq!(s.supervised_span, s.messages.last().unwrap().content);
        }
    }

    #[test]
    fn always_wrong_rejects_at_the_first_round() {
        let cfg = PipelineConfig::new("ticketing", 2, 2, 1);
        let env = Environment::builtin("ticketing").unwrap();
        let agents = AgentSet::scripted(ReasonerMode::AlwaysWrong, 1);
        match build_trajectory(&cfg, env, &agents, 0, 1).unwrap() {
            TrajectoryOutcome::Rejected(r) => {
                assert_eq!(r.round, 0);
                assert_eq!(r.attempts, [cfg.chain.k_max as usize + 1]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn transcript_legality() {
        let s = ChatMessage::system("s");
        let u = ChatMessage::user("u");
        let a = ChatMessage::assistant("a");
        let t = ChatMessage::tool("t");
        assert!(transcript_is_legal(&[s.clone(), u.clone(), a.clone(), t.clone(), a.clone(), u.clone(), a.clone()]));
        assert!(!transcript_is_legal(&[s.clone(), a.clone()]));
        assert!(!transcript_is_legal(&[s.clone(), u.clone(), t.clone()]));
        assert!(!transcript_is_legal(&[u, a]));
    }
}
