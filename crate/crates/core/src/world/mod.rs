//! Graph-based house environments.
//!
//! A house is an undirected graph of navigable viewpoints. Each node carries a
//! metric position, a room label and the objects annotated there. Edge
//! weights are the Euclidean distances between endpoint positions.

mod gen;
mod paths;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{normalize_category, Codebook};

pub use gen::{gen_world, GeneratorConfig};

pub type Vec3 = [f64; 3];

/// Episode budget used when a task file omits `max_steps`.
pub const DEFAULT_MAX_STEPS: usize = 15;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = WorldError> = std::result::Result<T, E>;

pub fn distance(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub id: String,
    pub category: String,
    pub center: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavNode {
    pub id: String,
    pub pos: Vec3,
    pub room: String,
    pub n_views: usize,
    #[serde(default)]
    pub objects: Vec<ObjectAnnotation>,
}

/// One REVERIE-style episode specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub instruction: String,
    pub target_object_category: String,
    pub goal_node_ids: Vec<String>,
    pub target_object_ids: Vec<String>,
    pub start_node: String,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_max_steps() -> usize {
    DEFAULT_MAX_STEPS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewObservation {
    pub view_index: usize,
    pub visible_object_ids: Vec<String>,
    pub feature_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Panorama {
    pub node_id: String,
    pub views: Vec<ViewObservation>,
}

/// Key of a single view's image feature in a feature store.
pub fn view_feature_key(node: &str, view: usize) -> String {
    format!("{node}/{view}")
}

#[derive(Serialize, Deserialize)]
struct EnvironmentFile {
    id: String,
    nodes: Vec<NavNode>,
    edges: Vec<[String; 2]>,
}

/// An immutable, validated house graph.
#[derive(Debug, Clone)]
pub struct NavGraph {
    id: String,
    nodes: Vec<NavNode>,
    edges: Vec<[String; 2]>,
    index: HashMap<String, usize>,
    // neighbor indices, sorted by neighbor id
    adj: Vec<Vec<usize>>,
}

impl PartialEq for NavGraph {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id && self.nodes == other.nodes && self.edges == other.edges
    }
}

impl NavGraph {
    /// Builds and validates a graph against the built-in codebooks.
    pub fn new(id: impl Into<String>, nodes: Vec<NavNode>, edges: Vec<[String; 2]>) -> Result<Self> {
        Self::with_codebooks(
            id,
            nodes,
            edges,
            &Codebook::default_rooms(),
            &Codebook::default_objects(),
        )
    }

    pub fn with_codebooks(
        id: impl Into<String>,
        nodes: Vec<NavNode>,
        edges: Vec<[String; 2]>,
        rooms: &Codebook,
        objects: &Codebook,
    ) -> Result<Self> {
        let invalid = |msg: String| Err(WorldError::Validation(msg));
        if nodes.is_empty() {
            return invalid("graph has no nodes".into());
        }
        let mut index = HashMap::with_capacity(nodes.len());
        let mut object_ids = HashSet::new();
        for (i, node) in nodes.iter().enumerate() {
            if index.insert(node.id.clone(), i).is_some() {
                return invalid(format!("duplicate node id {:?}", node.id));
            }
            if node.n_views == 0 {
                return invalid(format!("node {:?} has n_views = 0", node.id));
            }
            if !node.pos.iter().all(|v| v.is_finite()) {
                return invalid(format!("node {:?} has a non-finite position", node.id));
            }
            if !rooms.contains(&node.room) || normalize_category(&node.room) != node.room {
                return invalid(format!("unknown room label {:?} at node {:?}", node.room, node.id));
            }
            for obj in &node.objects {
                if !object_ids.insert(obj.id.as_str()) {
                    return invalid(format!("duplicate object id {:?}", obj.id));
                }
                if !objects.contains(&obj.category) || normalize_category(&obj.category) != obj.category {
                    return invalid(format!("unknown object category {:?} on {:?}", obj.category, obj.id));
                }
                if !obj.center.iter().all(|v| v.is_finite()) {
                    return invalid(format!("object {:?} has a non-finite center", obj.id));
                }
            }
        }

        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        let mut seen = HashSet::new();
        for [a, b] in &edges {
            let (Some(&ia), Some(&ib)) = (index.get(a), index.get(b)) else {
                return invalid(format!("dangling edge {a:?} - {b:?}"));
            };
            if ia == ib {
                return invalid(format!("self-loop at {a:?}"));
            }
            if !seen.insert((ia.min(ib), ia.max(ib))) {
                return invalid(format!("duplicate edge {a:?} - {b:?}"));
            }
            adj[ia].push(ib);
            adj[ib].push(ia);
        }
        for list in &mut adj {
            list.sort_by(|&x, &y| nodes[x].id.cmp(&nodes[y].id));
        }

        let graph = Self {
            id: id.into(),
            nodes,
            edges,
            index,
            adj,
        };
        if !graph.is_connected() {
            return invalid("graph is disconnected".into());
        }
        Ok(graph)
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for &j in &self.adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == self.nodes.len()
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn nodes(&self) -> &[NavNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[[String; 2]] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| WorldError::UnknownNode(id.to_string()))
    }

    pub fn node(&self, id: &str) -> Result<&NavNode> {
        Ok(&self.nodes[self.index_of(id)?])
    }

    pub(crate) fn node_at(&self, i: usize) -> &NavNode {
        &self.nodes[i]
    }

    pub(crate) fn neighbors_of(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    /// Derived adjacency map, neighbor lists sorted by id.
    pub fn adjacency(&self) -> BTreeMap<&str, Vec<&str>> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let ns = self.adj[i].iter().map(|&j| self.nodes[j].id.as_str()).collect();
                (n.id.as_str(), ns)
            })
            .collect()
    }

    /// Navigable neighbors of `node`, ascending by node id.
    pub fn candidates(&self, node: &str) -> Result<Vec<String>> {
        let i = self.index_of(node)?;
        Ok(self.adj[i].iter().map(|&j| self.nodes[j].id.clone()).collect())
    }

    pub fn are_adjacent(&self, a: &str, b: &str) -> Result<bool> {
        let ia = self.index_of(a)?;
        let ib = self.index_of(b)?;
        Ok(self.adj[ia].contains(&ib))
    }

    /// Splits the node's objects across its panorama views by a stable hash
    /// of the object id.
    pub fn observe(&self, node: &str) -> Result<Panorama> {
        let n = self.node(node)?;
        let mut views: Vec<ViewObservation> = (0..n.n_views)
            .map(|v| ViewObservation {
                view_index: v,
                visible_object_ids: Vec::new(),
                feature_ref: Some(view_feature_key(&n.id, v)),
            })
            .collect();
        for obj in &n.objects {
            let v = (fnv1a(obj.id.as_bytes()) % n.n_views as u64) as usize;
            views[v].visible_object_ids.push(obj.id.clone());
        }
        Ok(Panorama {
            node_id: n.id.clone(),
            views,
        })
    }

    /// Looks up an object annotation anywhere in the house.
    pub fn object(&self, object_id: &str) -> Option<(&NavNode, &ObjectAnnotation)> {
        self.nodes
            .iter()
            .find_map(|n| n.objects.iter().find(|o| o.id == object_id).map(|o| (n, o)))
    }

    /// Distinct room labels in node order of first appearance.
    pub fn rooms(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for n in &self.nodes {
            if !out.contains(&n.room.as_str()) {
                out.push(&n.room);
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let file = EnvironmentFile {
            id: self.id.clone(),
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("environment serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_with(text, &Codebook::default_rooms(), &Codebook::default_objects())
    }

    pub fn from_json_with(text: &str, rooms: &Codebook, objects: &Codebook) -> Result<Self> {
        let file: EnvironmentFile = serde_json::from_str(text)?;
        Self::with_codebooks(file.id, file.nodes, file.edges, rooms, objects)
    }

    /// Checks that a task is well-formed for this house.
    pub fn validate_task(&self, task: &Task) -> Result<()> {
        let invalid = |msg: String| Err(WorldError::Validation(msg));
        if task.instruction.trim().is_empty() {
            return invalid(format!("task {:?} has an empty instruction", task.id));
        }
        if task.max_steps == 0 {
            return invalid(format!("task {:?} has max_steps = 0", task.id));
        }
        self.index_of(&task.start_node)?;
        if task.goal_node_ids.is_empty() {
            return invalid(format!("task {:?} has no goal nodes", task.id));
        }
        if task.target_object_ids.is_empty() {
            return invalid(format!("task {:?} has no target objects", task.id));
        }
        let mut goals = Vec::with_capacity(task.goal_node_ids.len());
        for g in &task.goal_node_ids {
            goals.push(self.node(g)?);
        }
        for t in &task.target_object_ids {
            if !goals.iter().any(|g| g.objects.iter().any(|o| &o.id == t)) {
                return invalid(format!(
                    "target object {t:?} of task {:?} is not on a goal node",
                    task.id
                ));
            }
        }
        Ok(())
    }
}

/// 64-bit FNV-1a; stable across platforms and toolchains.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| WorldError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| WorldError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_environment(path: &Path) -> Result<NavGraph> {
    NavGraph::from_json(&read_file(path)?)
}

pub fn save_environment(graph: &NavGraph, path: &Path) -> Result<()> {
    write_file(path, &graph.to_json())
}

pub fn tasks_to_json(tasks: &[Task]) -> String {
    let mut s = serde_json::to_string_pretty(tasks).expect("tasks serialize");
    s.push('\n');
    s
}

pub fn load_tasks(path: &Path) -> Result<Vec<Task>> {
    Ok(serde_json::from_str(&read_file(path)?)?)
}

pub fn save_tasks(tasks: &[Task], path: &Path) -> Result<()> {
    write_file(path, &tasks_to_json(tasks))
}


#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;

    #[test]
    fn smallest_valid_graph() {
        let g = NavGraph::from_json(
            r#"{"id":"g","nodes":[
                {"id":"n0","pos":[0,0,0],"room":"kitchen","n_views":4,"objects":[]},
                {"id":"n1","pos":[1,0,0],"room":"kitchen","n_views":4,"objects":[]}],
              "edges":[["n0","n1"]]}"#,
        )
        .unwrap();
        let adj = g.adjacency();
        assert_eq!(adj["n0"], vec!["n1"]);
        assert_eq!(adj["n1"], vec!["n0"]);
    }

    fn two_nodes_with_edges(edges: Vec<[String; 2]>) -> Result<NavGraph> {
        NavGraph::new(
            "g",
            vec![node("n0", [0.0; 3], "kitchen"), node("n1", [1.0, 0.0, 0.0], "kitchen")],
            edges,
        )
    }

    #[test]
    fn dangling_edge_is_rejected() {
        let err = two_nodes_with_edges(vec![edge("n0", "n1"), edge("n0", "nX")]).unwrap_err();
        assert!(matches!(&err, WorldError::Validation(m) if m.starts_with("dangling edge")), "{err}");
    }

    #[test]
    fn structural_violations_are_rejected() {
        for (edges, expect) in [
            (vec![edge("n0", "n1"), edge("n1", "n0")], "duplicate edge"),
            (vec![edge("n0", "n1"), edge("n1", "n1")], "self-loop"),
            (vec![], "graph is disconnected"),
        ] {
            let err = two_nodes_with_edges(edges).unwrap_err();
            assert!(matches!(&err, WorldError::Validation(m) if m.starts_with(expect)), "{err}");
        }
    }

    #[test]
    fn unknown_labels_are_rejected() {
        let err = NavGraph::new("g", vec![node("n0", [0.0; 3], "throne room")], vec![]).unwrap_err();
        assert!(err.to_string().contains("unknown room label"));

        let mut n = node("n0", [0.0; 3], "kitchen");
        n.objects.push(obj("o1", "dragon", [0.0; 3]));
        let err = NavGraph::new("g", vec![n], vec![]).unwrap_err();
        assert!(err.to_string().contains("unknown object category"));
    }

    #[test]
    fn object_ids_are_unique_across_nodes() {
        let mut a = node("n0", [0.0; 3], "kitchen");
        let mut b = node("n1", [1.0, 0.0, 0.0], "kitchen");
        a.objects.push(obj("o1", "sink", [0.0; 3]));
        b.objects.push(obj("o1", "oven", [1.0, 0.0, 0.0]));
        let err = NavGraph::new("g", vec![a, b], vec![edge("n0", "n1")]).unwrap_err();
        assert!(err.to_string().contains("duplicate object id"));
    }

    #[test]
    fn zero_views_is_rejected() {
        let mut n = node("n0", [0.0; 3], "kitchen");
        n.n_views = 0;
        assert!(NavGraph::new("g", vec![n], vec![]).is_err());
    }

    #[test]
    fn candidates_are_sorted() {
        let nodes = vec![
            node("hub", [0.0; 3], "hallway"),
            node("c", [1.0, 0.0, 0.0], "hallway"),
            node("a", [0.0, 1.0, 0.0], "hallway"),
            node("b", [-1.0, 0.0, 0.0], "hallway"),
        ];
        let g = NavGraph::new(
            "star",
            nodes,
            vec![edge("hub", "c"), edge("a", "hub"), edge("hub", "b")],
        )
        .unwrap();
        assert_eq!(g.candidates("hub").unwrap(), vec!["a", "b", "c"]);
        assert_eq!(g.candidates("a").unwrap(), vec!["hub"]);
        assert!(matches!(g.candidates("zz"), Err(WorldError::UnknownNode(_))));
    }

    #[test]
    fn observe_distributes_objects() {
        let g = line(&["kitchen", "kitchen"]);
        let p = g.observe("n0").unwrap();
        assert_eq!(p.views.len(), 4);
        assert!(p.views.iter().all(|v| v.visible_object_ids.is_empty()));
        assert_eq!(p.views[2].feature_ref.as_deref(), Some("n0/2"));

        let mut n = node("n0", [0.0; 3], "kitchen");
        n.objects.push(obj("o7", "sink", [0.0; 3]));
        let g = NavGraph::new("g", vec![n], vec![]).unwrap();
        let p = g.observe("n0").unwrap();
        let holding: Vec<_> = p.views.iter().filter(|v| !v.visible_object_ids.is_empty()).collect();
        assert_eq!(holding.len(), 1);
        assert_eq!(holding[0].visible_object_ids, vec!["o7"]);
        assert_eq!(g.observe("n0").unwrap(), p);
    }

    #[test]
    fn task_validation() {
        let mut n1 = node("n1", [1.0, 0.0, 0.0], "kitchen");
        n1.objects.push(obj("o1", "sink", [1.0, 0.0, 0.0]));
        let g = NavGraph::new(
            "g",
            vec![node("n0", [0.0; 3], "kitchen"), n1],
            vec![edge("n0", "n1")],
        )
        .unwrap();
        let mut task: Task = serde_json::from_str(
            r#"{"id":"t","instruction":"Clean the sink","target_object_category":"sink",
                "goal_node_ids":["n1"],"target_object_ids":["o1"],"start_node":"n0"}"#,
        )
        .unwrap();
        assert_eq!(task.max_steps, DEFAULT_MAX_STEPS);
        g.validate_task(&task).unwrap();
        task.goal_node_ids = vec!["n0".into()];
        assert!(g.validate_task(&task).is_err());
        task.goal_node_ids = vec!["n9".into()];
        assert!(matches!(g.validate_task(&task), Err(WorldError::UnknownNode(_))));
    }
}
