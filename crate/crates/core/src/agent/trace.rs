//! JSONL trace files: a header line, one line per step record, a final line.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentError, EpisodeTrace, Mode, StepRecord, StopReason};
use crate::planner::{Exchange, GoalPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub task_id: String,
    pub seed: u64,
    pub config_hash: String,
    pub mode: Mode,
    pub demo_id: Option<String>,
    pub goal: Option<GoalPlan>,
    pub gosp: Vec<Exchange>,
}

/// Last line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub path: Vec<String>,
    pub grounded_object_id: Option<String>,
    pub stop_reason: StopReason,
    pub final_instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn line<T: Serialize>(out: &mut String, value: &T) {
    out.push_str(&serde_json::to_string(value).expect("trace values serialize"));
    out.push('\n');
}

pub fn render_trace(trace: &EpisodeTrace, seed: u64, config_hash: &str) -> String {
    let mut out = String::new();
    line(
        &mut out,
        &TraceHeader {
            task_id: trace.task_id.clone(),
            seed,
            config_hash: config_hash.to_string(),
            mode: trace.mode,
            demo_id: trace.demo_id.clone(),
            goal: trace.goal.clone(),
            gosp: trace.gosp.clone(),
        },
    );
    for s in &trace.steps {
        line(&mut out, s);
    }
    line(
        &mut out,
        &TraceRecord {
            path: trace.path.clone(),
            grounded_object_id: trace.grounded_object_id.clone(),
            stop_reason: trace.stop_reason,
            final_instruction: trace.final_instruction.clone(),
            error: trace.error.clone(),
        },
    );
    out
}

/// Parses a trace file's text back into its header and trace.
pub fn read_trace(text: &str) -> Result<(TraceHeader, EpisodeTrace), AgentError> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() < 2 {
        return Err(AgentError::Trace("a trace needs a header and a final line".into()));
    }
    let bad = |what: &str, i: usize, e: serde_json::Error| AgentError::Trace(format!("{what} on line {}: {e}", i + 1));
    let header: TraceHeader = serde_json::from_str(lines[0]).map_err(|e| bad("header", 0, e))?;
    let last = lines.len() - 1;
    let record: TraceRecord = serde_json::from_str(lines[last]).map_err(|e| bad("final record", last, e))?;
    let steps = lines[1..last]
        .iter()
        .enumerate()
        .map(|(i, l)| serde_json::from_str::<StepRecord>(l).map_err(|e| bad("step", i + 1, e)))
        .collect::<Result<Vec<_>, _>>()?;
    if record.path.is_empty() {
        return Err(AgentError::Trace("empty path".into()));
    }
    let trace = EpisodeTrace {
        task_id: header.task_id.clone(),
        mode: header.mode,
        demo_id: header.demo_id.clone(),
        goal: header.goal.clone(),
        gosp: header.gosp.clone(),
        path: record.path,
        steps,
        grounded_object_id: record.grounded_object_id,
        stop_reason: record.stop_reason,
        final_instruction: record.final_instruction,
        error: record.error,
    };
    Ok((header, trace))
}

/// Writes the trace through a temporary sibling file and a rename.
pub fn write_trace(path: &Path, trace: &EpisodeTrace, seed: u64, config_hash: &str) -> Result<(), AgentError> {
    let tmp = path.with_extension("jsonl.tmp");
    fs::write(&tmp, render_trace(trace, seed, config_hash))?;
    fs::rename(&tmp, path)?;
    Ok(())
}
