//! Seeded synthetic houses.
//!
//! Rooms occupy cells of a square grid and are joined into a random spanning
//! tree (plus occasional extra doors). Each room is a small cluster of
//! viewpoints connected in a chain; doors link the closest pair of nodes of
//! two neighboring rooms.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{distance, NavGraph, NavNode, ObjectAnnotation, Result, Task, Vec3, WorldError, DEFAULT_MAX_STEPS};
use crate::codebook::{cooccurring_objects, Codebook};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub rooms: usize,
    pub nodes_per_room: usize,
    pub tasks: usize,
    /// Objects per node are drawn uniformly from `1..=max_objects_per_node`.
    pub max_objects_per_node: usize,
    pub n_views: usize,
    /// Distance between neighboring room centers, meters.
    pub room_spacing: f64,
    /// Distance between neighboring nodes inside a room, meters.
    pub node_spacing: f64,
    /// Probability that a generated instruction names the target room.
    pub room_mention_prob: f64,
    /// Probability of an extra door between grid-adjacent rooms not joined by
    /// the spanning tree.
    pub extra_door_prob: f64,
    pub max_steps: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            rooms: 4,
            nodes_per_room: 3,
            tasks: 20,
            max_objects_per_node: 3,
            n_views: 4,
            room_spacing: 8.0,
            node_spacing: 2.0,
            room_mention_prob: 0.3,
            extra_door_prob: 0.25,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

const VERBS: [&str; 6] = ["Clean", "Find", "Check", "Inspect", "Go to", "Look at"];
const SUFFIXES: [&str; 3] = ["", " on level one", " please"];

fn round_mm(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Generates a house and a task suite; a pure function of `(seed, config)`.
pub fn gen_world(seed: u64, config: &GeneratorConfig) -> Result<(NavGraph, Vec<Task>)> {
    let room_book = Codebook::default_rooms();
    if config.rooms < 2 {
        return Err(WorldError::Config(format!("room count {} < 2", config.rooms)));
    }
    if config.rooms > room_book.len() {
        return Err(WorldError::Config(format!(
            "room count {} exceeds room codebook size {}",
            config.rooms,
            room_book.len()
        )));
    }
    if config.nodes_per_room == 0 {
        return Err(WorldError::Config("nodes per room must be >= 1".into()));
    }
    if config.max_objects_per_node == 0 || config.n_views == 0 || config.max_steps == 0 {
        return Err(WorldError::Config(
            "max_objects_per_node, n_views and max_steps must be >= 1".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let room_labels: Vec<String> = room_book
        .categories()
        .choose_multiple(&mut rng, config.rooms)
        .cloned()
        .collect();

    // Room placement on grid cells, growing a random tree.
    let mut cells: Vec<(i32, i32)> = vec![(0, 0)];
    let mut doors: Vec<(usize, usize)> = Vec::new();
    for r in 1..config.rooms {
        let occupied: BTreeSet<(i32, i32)> = cells.iter().copied().collect();
        let mut options: Vec<(usize, (i32, i32))> = Vec::new();
        for (parent, &(x, y)) in cells.iter().enumerate() {
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let c = (x + dx, y + dy);
                if !occupied.contains(&c) {
                    options.push((parent, c));
                }
            }
        }
        let &(parent, cell) = options.choose(&mut rng).expect("grid always has a free cell");
        cells.push(cell);
        doors.push((parent, r));
    }
    for a in 0..config.rooms {
        for b in (a + 1)..config.rooms {
            let (ca, cb) = (cells[a], cells[b]);
            let adjacent = (ca.0 - cb.0).abs() + (ca.1 - cb.1).abs() == 1;
            if adjacent && !doors.contains(&(a, b)) && rng.gen_bool(config.extra_door_prob) {
                doors.push((a, b));
            }
        }
    }

    // Node positions, room by room.
    let per = config.nodes_per_room;
    let cols = (per as f64).sqrt().ceil() as usize;
    let rows = per.div_ceil(cols);
    let mut positions: Vec<Vec3> = Vec::with_capacity(config.rooms * per);
    let mut room_of: Vec<usize> = Vec::with_capacity(config.rooms * per);
    for (r, &(cx, cy)) in cells.iter().enumerate() {
        let center = [cx as f64 * config.room_spacing, cy as f64 * config.room_spacing];
        for j in 0..per {
            let (col, row) = (j % cols, j / cols);
            let ox = (col as f64 - (cols - 1) as f64 / 2.0) * config.node_spacing;
            let oy = (row as f64 - (rows - 1) as f64 / 2.0) * config.node_spacing;
            let jx = rng.gen_range(-0.3..0.3);
            let jy = rng.gen_range(-0.3..0.3);
            positions.push([round_mm(center[0] + ox + jx), round_mm(center[1] + oy + jy), 0.0]);
            room_of.push(r);
        }
    }

    let total = positions.len();
    let width = total.to_string().len().max(2);
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);
    let ids: Vec<String> = order.iter().map(|k| format!("n{k:0width$}")).collect();

    let mut edge_idx: Vec<(usize, usize)> = Vec::new();
    for r in 0..config.rooms {
        for j in 1..per {
            edge_idx.push((r * per + j - 1, r * per + j));
        }
    }
    for &(a, b) in &doors {
        let mut best = (f64::INFINITY, 0, 0);
        for i in (a * per)..((a + 1) * per) {
            for j in (b * per)..((b + 1) * per) {
                let d = distance(&positions[i], &positions[j]);
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        edge_idx.push((best.1, best.2));
    }

    // Objects.
    let mut next_obj = 0usize;
    let mut nodes: Vec<NavNode> = Vec::with_capacity(total);
    for i in 0..total {
        let room = &room_labels[room_of[i]];
        let pool = cooccurring_objects(room);
        let count = rng.gen_range(1..=config.max_objects_per_node.min(pool.len()));
        let cats: Vec<&str> = pool.choose_multiple(&mut rng, count).copied().collect();
        let mut objects = Vec::with_capacity(count);
        for cat in cats {
            let p = positions[i];
            objects.push(ObjectAnnotation {
                id: format!("o{next_obj:03}"),
                category: cat.to_string(),
                center: [
                    round_mm(p[0] + rng.gen_range(-0.5..0.5)),
                    round_mm(p[1] + rng.gen_range(-0.5..0.5)),
                    round_mm(rng.gen_range(0.3..1.2)),
                ],
            });
            next_obj += 1;
        }
        nodes.push(NavNode {
            id: ids[i].clone(),
            pos: positions[i],
            room: room.clone(),
            n_views: config.n_views,
            objects,
        });
    }

    let edges: Vec<[String; 2]> = edge_idx
        .iter()
        .map(|&(a, b)| [ids[a].clone(), ids[b].clone()])
        .collect();

    // Emit nodes sorted by id so the file reads naturally.
    let mut sorted = nodes;
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let graph = NavGraph::new(format!("house_{seed}"), sorted, edges)?;

    let tasks = gen_tasks(&graph, &mut rng, config)?;
    Ok((graph, tasks))
}

fn gen_tasks(graph: &NavGraph, rng: &mut ChaCha8Rng, config: &GeneratorConfig) -> Result<Vec<Task>> {
    // Candidate targets: objects whose category occurs once in their room.
    let mut per_room: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for n in graph.nodes() {
        let counts = per_room.entry(n.room.as_str()).or_default();
        for o in &n.objects {
            *counts.entry(o.category.as_str()).or_default() += 1;
        }
    }
    let mut candidates: Vec<(&NavNode, &ObjectAnnotation)> = Vec::new();
    for n in graph.nodes() {
        for o in &n.objects {
            if per_room[n.room.as_str()][o.category.as_str()] == 1 {
                candidates.push((n, o));
            }
        }
    }
    if candidates.is_empty() {
        return Err(WorldError::Config("no room-unique object to use as a target".into()));
    }

    let mut tasks = Vec::with_capacity(config.tasks);
    for t in 0..config.tasks {
        let &(goal, target) = candidates.choose(rng).expect("non-empty");
        let starts: Vec<&NavNode> = graph.nodes().iter().filter(|n| n.room != goal.room).collect();
        let start = starts.choose(rng).expect("at least two rooms");
        let verb = VERBS.choose(rng).expect("non-empty");
        let suffix = SUFFIXES.choose(rng).expect("non-empty");
        let instruction = if rng.gen_bool(config.room_mention_prob) {
            if rng.gen_bool(0.5) {
                format!("Go to the {} and {} the {}", goal.room, verb.to_lowercase(), target.category)
            } else {
                format!("{verb} the {} in the {}", target.category, goal.room)
            }
        } else {
            format!("{verb} the {}{suffix}", target.category)
        };
        tasks.push(Task {
            id: format!("{}_t{t:02}", graph.id()),
            instruction,
            target_object_category: target.category.clone(),
            goal_node_ids: vec![goal.id.clone()],
            target_object_ids: vec![target.id.clone()],
            start_node: start.id.clone(),
            max_steps: config.max_steps,
        });
    }
    Ok(tasks)
}
