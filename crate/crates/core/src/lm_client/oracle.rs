//! Deterministic in-process language models.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LmClient, LmError, LmRequest, LmResponse};
use crate::planner::prompts::{LOCATION_CUE, RECOGNITION_CUE, SCENE_PREFIX, SCENE_SEPARATOR};
use crate::world::{NavGraph, Task};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match")]
    pub matcher: String,
    pub reply: String,
}

/// Replies with the first script entry whose matcher is a substring of the
/// prompt. Unmatched prompts get `finish_reason = error`.
#[derive(Debug, Clone, Default)]
pub struct ScriptedOracle {
    script: Vec<ScriptEntry>,
}

impl ScriptedOracle {
    pub fn new<I, M, R>(entries: I) -> Self
    where
        I: IntoIterator<Item = (M, R)>,
        M: Into<String>,
        R: Into<String>,
    {
        Self {
            script: entries
                .into_iter()
                .map(|(m, r)| ScriptEntry {
                    matcher: m.into(),
                    reply: r.into(),
                })
                .collect(),
        }
    }

    /// Loads a JSON array of `{"match": str, "reply": str}` objects.
    pub fn from_file(path: &Path) -> Result<Self, LmError> {
        let text = fs::read_to_string(path)
            .map_err(|e| LmError::InvalidRequest(format!("cannot read script {}: {e}", path.display())))?;
        let script: Vec<ScriptEntry> =
            serde_json::from_str(&text).map_err(|e| LmError::InvalidRequest(format!("bad script: {e}")))?;
        Ok(Self { script })
    }
}

impl LmClient for ScriptedOracle {
    fn complete(&self, req: &LmRequest) -> Result<LmResponse, LmError> {
        Ok(self
            .script
            .iter()
            .find(|e| req.prompt.contains(&e.matcher))
            .map(|e| LmResponse::stop(e.reply.clone()))
            .unwrap_or_else(LmResponse::error))
    }
}

/// Emits the plans an ideal planner would, derived from the true house.
///
/// The oracle only sees prompt text. Scene prompts are answered with the next
/// room on the shortest route from the room named in the scene line; a room
/// that does not exist in the house yields `Exit the {room}`. Scene-free
/// prompts are answered from the task's start node, advancing one room per
/// requested step.
#[derive(Debug, Clone)]
pub struct GroundTruthOracle {
    target: String,
    goal_room: String,
    routes: BTreeMap<String, Vec<String>>,
    start_route: Vec<String>,
}

fn room_sequence(graph: &NavGraph, path: &[String]) -> Vec<String> {
    let mut rooms: Vec<String> = Vec::new();
    for id in path {
        let room = &graph.node(id).expect("path node exists").room;
        if rooms.last() != Some(room) {
            rooms.push(room.clone());
        }
    }
    rooms
}

impl GroundTruthOracle {
    pub fn new(graph: &NavGraph, task: &Task) -> Result<Self, LmError> {
        let unsolvable = |m: String| LmError::UnsolvableTask(m);
        graph.validate_task(task).map_err(|e| unsolvable(e.to_string()))?;
        let goal_room = graph.node(&task.goal_node_ids[0]).expect("validated").room.clone();

        let route_from = |sources: Vec<String>| -> Result<Vec<String>, LmError> {
            let path = graph
                .shortest_path_between_sets(&sources, &task.goal_node_ids)
                .map_err(|e| unsolvable(e.to_string()))?
                .ok_or_else(|| unsolvable(format!("goal of {:?} is unreachable", task.id)))?;
            Ok(room_sequence(graph, &path))
        };

        let start_route = route_from(vec![task.start_node.clone()])?;
        let mut routes = BTreeMap::new();
        for room in graph.rooms() {
            let members: Vec<String> = graph
                .nodes()
                .iter()
                .filter(|n| n.room == room)
                .map(|n| n.id.clone())
                .collect();
            routes.insert(room.to_string(), route_from(members)?);
        }
        Ok(Self {
            target: task.target_object_category.clone(),
            goal_room,
            routes,
            start_route,
        })
    }

    pub fn goal_room(&self) -> &str {
        &self.goal_room
    }

    /// Room sequence from `room` to the goal room, if `room` is in the house.
    pub fn route_from_room(&self, room: &str) -> Option<&[String]> {
        self.routes.get(room).map(Vec::as_slice)
    }

    fn next_hop(route: &[String], step: usize) -> &str {
        &route[step.min(route.len() - 1)]
    }

    fn answer(&self, prompt: &str) -> Option<String> {
        if prompt.ends_with(RECOGNITION_CUE) {
            return Some(self.target.clone());
        }
        if prompt.ends_with(LOCATION_CUE) {
            return Some(self.goal_room.clone());
        }
        if let Some(start) = prompt.find(SCENE_PREFIX) {
            let rest = &prompt[start + SCENE_PREFIX.len()..];
            let room = &rest[..rest.find(SCENE_SEPARATOR)?];
            return Some(match self.routes.get(room) {
                Some(route) => format!("Go to the {}", Self::next_hop(route, 1)),
                None => format!("Exit the {room}"),
            });
        }
        // scene-free planning prompt ending in "Step n: "
        let last = prompt.rsplit('\n').next()?;
        let n: usize = last.strip_prefix("Step ")?.strip_suffix(": ")?.parse().ok()?;
        Some(format!("Go to the {}", Self::next_hop(&self.start_route, n)))
    }
}

impl LmClient for GroundTruthOracle {
    fn complete(&self, req: &LmRequest) -> Result<LmResponse, LmError> {
        Ok(self
            .answer(&req.prompt)
            .map(LmResponse::stop)
            .unwrap_or_else(LmResponse::error))
    }
}
