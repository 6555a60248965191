//! Navigation and grounding metrics.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::EpisodeTrace;
use crate::world::{distance, NavGraph, Task, WorldError};

/// Success radius in meters. Both success and oracle success are strict.
pub const SUCCESS_THRESHOLD_M: f64 = 3.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("no task with id {0:?}")]
    MissingTask(String),
    #[error("no episodes to aggregate")]
    Empty,
    #[error(transparent)]
    World(#[from] WorldError),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

/// Sum of edge lengths along the path.
pub fn trajectory_length(trace: &EpisodeTrace, graph: &NavGraph) -> Result<f64> {
    if trace.path.is_empty() {
        return Err(MetricsError::InvalidPath("empty path".into()));
    }
    let mut total = 0.0;
    for w in trace.path.windows(2) {
        let (a, b) = (graph.node(&w[0])?, graph.node(&w[1])?);
        if a.id != b.id && !graph.are_adjacent(&a.id, &b.id)? {
            return Err(MetricsError::InvalidPath(format!("{} and {} are not adjacent", a.id, b.id)));
        }
        total += distance(&a.pos, &b.pos);
    }
    Ok(total)
}

pub fn success(trace: &EpisodeTrace, task: &Task, graph: &NavGraph, threshold: f64) -> Result<bool> {
    let stop = graph.node(trace.stop_node())?;
    let mut best = f64::INFINITY;
    for g in &task.goal_node_ids {
        best = best.min(distance(&stop.pos, &graph.node(g)?.pos));
    }
    Ok(best < threshold)
}

/// True iff some visited node is within `threshold` of a target object.
pub fn oracle_success(trace: &EpisodeTrace, task: &Task, graph: &NavGraph, threshold: f64) -> Result<bool> {
    let mut centers = Vec::with_capacity(task.target_object_ids.len());
    for id in &task.target_object_ids {
        let (_, o) = graph
            .object(id)
            .ok_or_else(|| WorldError::Validation(format!("unknown target object {id:?}")))?;
        centers.push(o.center);
    }
    for n in &trace.path {
        let pos = graph.node(n)?.pos;
        if centers.iter().any(|c| distance(&pos, c) < threshold) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// `S * l / max(p, l)`, with a successful zero-length episode scoring 1.
pub fn spl(success: bool, shortest: f64, actual: f64) -> f64 {
    if !success {
        return 0.0;
    }
    let denom = actual.max(shortest);
    if denom <= 0.0 {
        1.0
    } else {
        shortest / denom
    }
}

pub fn rgs(trace: &EpisodeTrace, task: &Task, graph: &NavGraph) -> Result<bool> {
    Ok(success(trace, task, graph, SUCCESS_THRESHOLD_M)?
        && trace
            .grounded_object_id
            .as_ref()
            .is_some_and(|id| task.target_object_ids.contains(id)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub task_id: String,
    pub tl: f64,
    pub shortest: f64,
    pub success: bool,
    pub oracle_success: bool,
    pub spl: f64,
    pub rgs: bool,
    pub rgspl: f64,
}

pub fn evaluate_episode(trace: &EpisodeTrace, task: &Task, graph: &NavGraph) -> Result<EpisodeMetrics> {
    let tl = trajectory_length(trace, graph)?;
    let first = trace.path.first().expect("checked non-empty");
    if *first != task.start_node {
        return Err(MetricsError::InvalidPath(format!(
            "path starts at {first} but the task starts at {}",
            task.start_node
        )));
    }
    let shortest = graph.distance_to_nearest(&task.start_node, &task.goal_node_ids)?;
    let s = success(trace, task, graph, SUCCESS_THRESHOLD_M)?;
    let r = rgs(trace, task, graph)?;
    Ok(EpisodeMetrics {
        task_id: task.id.clone(),
        tl,
        shortest,
        success: s,
        oracle_success: oracle_success(trace, task, graph, SUCCESS_THRESHOLD_M)?,
        spl: spl(s, shortest, tl),
        rgs: r,
        rgspl: spl(r, shortest, tl),
    })
}

/// Suite averages. Rates are percentages, `tl` is in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_episodes: usize,
    pub tl: f64,
    pub osr: f64,
    pub sr: f64,
    pub spl: f64,
    pub rgs: f64,
    pub rgspl: f64,
}

pub const CSV_HEADER: &str = "n,TL,OSR,SR,SPL,RGS,RGSPL";

impl MetricsReport {
    pub fn from_episodes(episodes: &[EpisodeMetrics]) -> Result<Self> {
        if episodes.is_empty() {
            return Err(MetricsError::Empty);
        }
        let n = episodes.len() as f64;
        let mean = |f: &dyn Fn(&EpisodeMetrics) -> f64| episodes.iter().map(f).sum::<f64>() / n;
        let rate = |f: &dyn Fn(&EpisodeMetrics) -> f64| mean(f) * 100.0;
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        Ok(Self {
            n_episodes: episodes.len(),
            tl: mean(&|e| e.tl),
            osr: rate(&|e| ind(e.oracle_success)),
            sr: rate(&|e| ind(e.success)),
            spl: rate(&|e| e.spl),
            rgs: rate(&|e| ind(e.rgs)),
            rgspl: rate(&|e| e.rgspl),
        })
    }

    /// `SPL <= SR <= OSR` and `RGSPL <= RGS <= SR`.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let checks = [
            ("SPL <= SR", self.spl <= self.sr),
            ("SR <= OSR", self.sr <= self.osr),
            ("RGSPL <= RGS", self.rgspl <= self.rgs),
            ("RGS <= SR", self.rgs <= self.sr),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((name, _)) => Err(format!("{name} violated by {self:?}")),
            None => Ok(()),
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2}",
            self.n_episodes, self.tl, self.osr, self.sr, self.spl, self.rgs, self.rgspl
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}\n", self.csv_row())
    }

    pub fn to_table(&self) -> String {
        let cols = ["n", "TL", "OSR", "SR", "SPL", "RGS", "RGSPL"];
        let vals = [
            self.n_episodes.to_string(),
            format!("{:.2}", self.tl),
            format!("{:.2}", self.osr),
            format!("{:.2}", self.sr),
            format!("{:.2}", self.spl),
            format!("{:.2}", self.rgs),
            format!("{:.2}", self.rgspl),
        ];
        let mut head = String::new();
        let mut row = String::new();
        for (c, v) in cols.iter().zip(&vals) {
            let w = c.len().max(v.len());
            let _ = write!(head, "{c:>w$}  ");
            let _ = write!(row, "{v:>w$}  ");
        }
        format!("{}\n{}\n", head.trim_end(), row.trim_end())
    }
}

/// Per-episode metrics and their aggregate, matching traces to tasks by id.
pub fn aggregate(traces: &[EpisodeTrace], tasks: &[Task], graph: &NavGraph) -> Result<(Vec<EpisodeMetrics>, MetricsReport)> {
    let by_id: HashMap<&str, &Task> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    let episodes = traces
        .iter()
        .map(|tr| {
            let task = by_id
                .get(tr.task_id.as_str())
                .ok_or_else(|| MetricsError::MissingTask(tr.task_id.clone()))?;
            evaluate_episode(tr, task, graph)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = MetricsReport::from_episodes(&episodes)?;
    Ok((episodes, report))
}
