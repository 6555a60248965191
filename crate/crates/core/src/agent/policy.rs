use crate::codebook::{mentions_phrase, normalize_category, Codebook};
use crate::perceiver::ScenePercept;
use crate::world::NavGraph;

use super::{ground_object, Action, PolicyDecision};

const TARGET_MARKER: &str = "The target object is a ";
const ROOM_MARKER: &str = ". It is usually in a ";

/// Everything a policy may look at when choosing the next action.
#[derive(Debug, Clone, Copy)]
pub struct PolicyContext<'a> {
    /// Rendered assembled instruction.
    pub state: &'a str,
    pub latest_step: Option<&'a str>,
    pub current: &'a str,
    pub graph: &'a NavGraph,
    pub percept: &'a ScenePercept,
    pub visited: &'a [String],
}

pub trait Policy: Send + Sync {
    fn decide(&self, ctx: &PolicyContext<'_>) -> PolicyDecision;
}

/// Rule-based stand-in for a learned navigator. It reads the goal sentence
/// and the latest step out of the instruction text and nothing else.
#[derive(Debug, Clone, Copy)]
pub struct KeywordPolicy<'a> {
    pub rooms: &'a Codebook,
    pub objects: &'a Codebook,
}

impl Policy for KeywordPolicy<'_> {
    fn decide(&self, ctx: &PolicyContext<'_>) -> PolicyDecision {
        keyword_policy(ctx, self.rooms, self.objects)
    }
}

/// Target object and goal room named in the instruction text, if any.
///
/// A goal sentence wins. Otherwise the first object and room mentioned in
/// the leading high-level instruction are used.
pub fn parse_goal(state: &str, rooms: &Codebook, objects: &Codebook) -> (Option<String>, Option<String>) {
    if let Some(i) = state.find(TARGET_MARKER) {
        let rest = &state[i + TARGET_MARKER.len()..];
        if let Some(j) = rest.find(ROOM_MARKER) {
            let target = rest[..j].to_string();
            let room_rest = &rest[j + ROOM_MARKER.len()..];
            let room = room_rest.find('.').map(|k| room_rest[..k].to_string());
            return (Some(target), room.filter(|r| !r.trim().is_empty()));
        }
    }
    let hli_end = [" Goal: ", " Step 1: "]
        .iter()
        .filter_map(|m| state.find(m))
        .min()
        .unwrap_or(state.len());
    let hli = &state[..hli_end];
    let target = objects.mentions(hli).first().map(|s| s.to_string());
    let room = rooms.mentions(hli).first().map(|s| s.to_string());
    (target, room)
}

pub fn keyword_policy(ctx: &PolicyContext<'_>, rooms: &Codebook, objects: &Codebook) -> PolicyDecision {
    let (target, goal_room) = parse_goal(ctx.state, rooms, objects);

    if let Some(target) = &target {
        let in_goal_room = goal_room
            .as_deref()
            .is_none_or(|g| normalize_category(g).contains(&normalize_category(&ctx.percept.room)));
        let visible = ctx.percept.objects.iter().any(|o| mentions_phrase(target, o));
        if in_goal_room && visible {
            let category = ctx
                .percept
                .objects
                .iter()
                .find(|o| mentions_phrase(target, o))
                .expect("visible");
            let grounded = ground_object(ctx.graph, ctx.current, category).ok().flatten();
            return PolicyDecision {
                action: Action::Stop,
                grounded_object_id: grounded,
            };
        }
    }

    // candidates come back sorted by id
    let neighbors = ctx.graph.candidates(ctx.current).unwrap_or_default();
    let unvisited = |id: &&String| !ctx.visited.contains(id);
    let named: Vec<&str> = ctx.latest_step.map(|s| rooms.mentions(s)).unwrap_or_default();
    let room_match: Vec<&String> = neighbors
        .iter()
        .filter(|n| {
            ctx.graph
                .node(n)
                .is_ok_and(|node| named.iter().any(|r| normalize_category(r) == normalize_category(&node.room)))
        })
        .collect();

    let next = room_match
        .iter()
        .copied()
        .find(unvisited)
        .or_else(|| room_match.first().copied())
        .or_else(|| neighbors.iter().find(unvisited))
        .or_else(|| neighbors.first());
    match next {
        Some(n) => PolicyDecision {
            action: Action::Move(n.clone()),
            grounded_object_id: None,
        },
        // an isolated single-node world has nowhere to go
        None => PolicyDecision {
            action: Action::Stop,
            grounded_object_id: None,
        },
    }
}
