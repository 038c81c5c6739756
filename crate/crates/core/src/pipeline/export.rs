//! JSONL export and the end-to-end audit over an exported file.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use super::{transcript_is_legal, PipelineError, TrainingSample, TurnKind};
use crate::agents::ChatRole;
use crate::callparse::{extract_sections, parse_call_list, CallSection};
use crate::chain::validate;

/// Writes one sample per line and returns the count. An empty slice yields
/// an empty file.
pub fn export_jsonl(samples: &[TrainingSample], path: &Path) -> Result<usize, PipelineError> {
    let io = |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for sample in samples {
        let line = serde_json::to_string(sample).expect("samples serialize");
        out.write_all(line.as_bytes()).map_err(io)?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok(samples.len())
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
}

pub fn read_jsonl(path: &Path) -> Result<Vec<TrainingSample>, AuditError> {
    let io = |source| AuditError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        let sample = serde_json::from_str(&line).map_err(|e| AuditError::Invalid {
            line: i + 1,
            reason: e.to_string(),
        })?;
        samples.push(sample);
    }
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AuditReport {
    pub samples: usize,
    pub trajectories: usize,
    pub call_turns: usize,
    pub answer_turns: usize,
}

fn check_sample(sample: &TrainingSample) -> Result<TurnKind, String> {
    let last = sample.messages.last().ok_or("sample has no messages")?;
    if last.role != ChatRole::Assistant {
        return Err("last message is not an assistant turn".into());
    }
    if sample.supervised_span.trim().is_empty() || last.content != sample.supervised_span {
        return Err("supervised span differs from the final assistant message".into());
    }
    if !transcript_is_legal(&sample.messages) {
        return Err("message roles do not alternate legally".into());
    }
    let tagged = extract_sections(&sample.supervised_span).map_err(|e| e.to_string())?;
    match sample.metadata.turn_kind {
        TurnKind::Call => {
            let Some(CallSection::Calls(calls)) = &tagged.tool_call else {
                return Err("call turn has no parseable <tool_call> list".into());
            };
            let gt_text = sample.metadata.ground_truth.as_deref().ok_or("call turn lacks ground truth")?;
            let gt = parse_call_list(gt_text).map_err(|e| format!("ground truth: {e}"))?;
            let report = validate(&CallSection::Calls(calls.clone()), &gt, sample.metadata.validation_policy);
            if !report.is_pass() {
                return Err(format!("call list fails validation with {} mismatch(es)", report.mismatches.len()));
            }
        }
        TurnKind::Answer => {
            if tagged.answer.is_none() {
                return Err("answer turn has no <answer> section".into());
            }
        }
    }
    Ok(sample.metadata.turn_kind)
}

/// Re-checks an exported file: every sample is well formed, every call turn
/// re-validates against its ground truth, samples of one trajectory are
/// consecutive growing prefixes, each trajectory has exactly one sample per
/// assistant message and ends on an answer turn.
pub fn audit(path: &Path) -> Result<AuditReport, AuditError> {
    let samples = read_jsonl(path)?;
    let mut report = AuditReport {
        samples: samples.len(),
        ..AuditReport::default()
    };
    let invalid = |line: usize, reason: String| AuditError::Invalid { line, reason };
    let mut group_start = 0;
    for (i, sample) in samples.iter().enumerate() {
        let line = i + 1;
        match check_sample(sample).map_err(|r| invalid(line, r))? {
            TurnKind::Call => report.call_turns += 1,
            TurnKind::Answer => report.answer_turns += 1,
        }
        let continues = i > 0 && samples[i - 1].metadata.trajectory_id == sample.metadata.trajectory_id;
        if i > 0 && !continues {
            close_group(&samples[group_start..i], group_start).map_err(|(l, r)| invalid(l, r))?;
            if samples[..group_start]
                .iter()
                .any(|s| s.metadata.trajectory_id == sample.metadata.trajectory_id)
            {
                return Err(invalid(line, "trajectory samples are not contiguous".into()));
            }
            group_start = i;
        }
        let position = i - group_start;
        if sample.metadata.assistant_index != position {
            return Err(invalid(
                line,
                format!("assistant_index {} where {position} was expected", sample.metadata.assistant_index),
            ));
        }
        if position > 0 {
            let prev = &samples[i - 1].messages;
            if sample.messages.len() <= prev.len() || sample.messages[..prev.len()] != prev[..] {
                return Err(invalid(line, "context does not extend the previous sample".into()));
            }
        }
    }
    if !samples.is_empty() {
        close_group(&samples[group_start..], group_start).map_err(|(l, r)| invalid(l, r))?;
    }
    let mut ids: Vec<&str> = samples.iter().map(|s| s.metadata.trajectory_id.as_str()).collect();
    ids.dedup();
    report.trajectories = ids.len();
    Ok(report)
}

fn close_group(group: &[TrainingSample], offset: usize) -> Result<(), (usize, String)> {
    let last = group.last().expect("groups are non-empty");
    if last.metadata.turn_kind != TurnKind::Answer {
        return Err((
            offset + group.len(),
            format!("trajectory {} does not end on an answer turn", last.metadata.trajectory_id),
        ));
    }
    let assistants = last.messages.iter().filter(|m| m.role == ChatRole::Assistant).count();
    if assistants != group.len() {
        return Err((
            offset + group.len(),
            format!(
                "trajectory {} has {} samples for {assistants} assistant messages",
                last.metadata.trajectory_id,
                group.len()
            ),
        ));
    }
    Ok(())
}
