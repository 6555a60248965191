//! Room-and-object aware scene perception.
//!
//! Per-view image features are scored against per-category text features by
//! a softmax over dot products. Room scores are averaged across the views of
//! a panorama; object scores keep the strongest view. A ground-truth source
//! reads the annotations directly, optionally corrupted by seeded noise.

mod features;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::Codebook;
use crate::world::{view_feature_key, NavGraph, WorldError};

pub use features::{synthesize_features, FeatureStore, FEATURE_MAGIC, FEATURE_VERSION};

/// Number of object categories kept per percept unless configured otherwise.
pub const DEFAULT_TOP_K: usize = 3;

#[derive(Debug, Error)]
pub enum PerceiverError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("category {0:?} is not in the codebook")]
    UnknownCategory(String),
    #[error("missing features for {0:?}")]
    MissingFeatures(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("feature store io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("feature store format error: {0}")]
    Format(String),
}

pub type Result<T, E = PerceiverError> = std::result::Result<T, E>;

/// Dense row-major matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Image or text embeddings, one per row.
pub type FeatureMatrix = Matrix;
/// Per-view category probabilities, one view per row.
pub type ScoreMatrix = Matrix;

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 {
            return Err(PerceiverError::InvalidMatrix("zero columns".into()));
        }
        if data.len() != rows * cols {
            return Err(PerceiverError::InvalidMatrix(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(PerceiverError::InvalidMatrix("non-finite entry".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(PerceiverError::DimensionMismatch {
                    left: cols,
                    right: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }
}

/// ROASP output at one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePercept {
    pub node_id: String,
    pub room: String,
    pub room_scores: Vec<f64>,
    pub objects: Vec<String>,
    pub object_scores: Vec<f64>,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax over the dot products of every view feature with every category
/// text feature. One output row per view, one column per category.
pub fn score_categories(view_features: &FeatureMatrix, text_features: &FeatureMatrix) -> Result<ScoreMatrix> {
    if view_features.cols() != text_features.cols() {
        return Err(PerceiverError::DimensionMismatch {
            left: view_features.cols(),
            right: text_features.cols(),
        });
    }
    if text_features.rows() == 0 {
        return Err(PerceiverError::EmptyInput);
    }
    let mut data = Vec::with_capacity(view_features.rows() * text_features.rows());
    for v in view_features.iter_rows() {
        let logits: Vec<f64> = text_features
            .iter_rows()
            .map(|t| v.iter().zip(t).map(|(a, b)| a * b).sum())
            .collect();
        data.extend(softmax(&logits));
    }
    Matrix::new(view_features.rows(), text_features.rows(), data)
}

/// Index of the largest value; lowest index wins ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_columns(scores: &ScoreMatrix, codebook: &Codebook) -> Result<()> {
    if scores.rows() == 0 {
        return Err(PerceiverError::EmptyInput);
    }
    if scores.cols() != codebook.len() {
        return Err(PerceiverError::DimensionMismatch {
            left: scores.cols(),
            right: codebook.len(),
        });
    }
    Ok(())
}

/// Averages room scores over views and picks the best category.
pub fn predict_room(room_scores: &ScoreMatrix, codebook: &Codebook) -> Result<(String, Vec<f64>)> {
    check_columns(room_scores, codebook)?;
    let mut mean = vec![0.0; room_scores.cols()];
    for row in room_scores.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let n = room_scores.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let best = argmax(&mean);
    Ok((codebook.categories()[best].clone(), mean))
}

/// Per-category object score: the maximum over views.
pub fn aggregate_object_scores(object_scores: &ScoreMatrix) -> Vec<f64> {
    let mut agg = vec![f64::NEG_INFINITY; object_scores.cols()];
    for row in object_scores.iter_rows() {
        for (a, &v) in agg.iter_mut().zip(row) {
            *a = a.max(v);
        }
    }
    agg
}

/// Category indices ordered by descending score, ties by ascending index.
fn ranked(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Top-k object categories by their strongest single-view score.
pub fn predict_objects(object_scores: &ScoreMatrix, codebook: &Codebook, k: usize) -> Result<Vec<String>> {
    check_columns(object_scores, codebook)?;
    if k == 0 {
        return Err(PerceiverError::EmptyInput);
    }
    let agg = aggregate_object_scores(object_scores);
    Ok(ranked(&agg)
        .into_iter()
        .take(k)
        .map(|i| codebook.categories()[i].clone())
        .collect())
}

/// Where percepts come from.
#[derive(Debug, Clone, Copy)]
pub enum PerceiverSource<'a> {
    /// Node annotations, each label flipped to a random other category with
    /// probability `p_noise`.
    GroundTruth {
        rooms: &'a Codebook,
        objects: &'a Codebook,
        p_noise: f64,
    },
    /// Zero-shot scoring of stored view features against text features.
    Features {
        store: &'a FeatureStore,
        rooms: &'a Codebook,
        objects: &'a Codebook,
    },
}

impl PerceiverSource<'_> {
    pub fn room_codebook(&self) -> &Codebook {
        match self {
            PerceiverSource::GroundTruth { rooms, .. } | PerceiverSource::Features { rooms, .. } => rooms,
        }
    }

    pub fn object_codebook(&self) -> &Codebook {
        match self {
            PerceiverSource::GroundTruth { objects, .. } | PerceiverSource::Features { objects, .. } => objects,
        }
    }
}

pub fn perceive<R: Rng + ?Sized>(
    source: &PerceiverSource<'_>,
    graph: &NavGraph,
    node: &str,
    k: usize,
    rng: &mut R,
) -> Result<ScenePercept> {
    if k == 0 {
        return Err(PerceiverError::EmptyInput);
    }
    match *source {
        PerceiverSource::GroundTruth {
            rooms,
            objects,
            p_noise,
        } => perceive_ground_truth(graph, node, k, rooms, objects, p_noise, rng),
        PerceiverSource::Features { store, rooms, objects } => {
            perceive_features(store, graph, node, k, rooms, objects)
        }
    }
}

fn perceive_ground_truth<R: Rng + ?Sized>(
    graph: &NavGraph,
    node: &str,
    k: usize,
    rooms: &Codebook,
    objects: &Codebook,
    p_noise: f64,
    rng: &mut R,
) -> Result<ScenePercept> {
    let n = graph.node(node)?;
    let p_noise = p_noise.clamp(0.0, 1.0);

    let true_room = rooms
        .index_of(&n.room)
        .ok_or_else(|| PerceiverError::UnknownCategory(n.room.clone()))?;
    let mut room = true_room;
    if rooms.len() > 1 && rng.gen_bool(p_noise) {
        let others: Vec<usize> = (0..rooms.len()).filter(|&i| i != true_room).collect();
        room = *others.choose(rng).expect("codebook has another room");
    }
    let mut room_scores = vec![0.0; rooms.len()];
    room_scores[room] = 1.0;

    let mut sorted: Vec<_> = n.objects.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut picked: Vec<usize> = Vec::new();
    for o in sorted {
        if picked.len() == k {
            break;
        }
        if let Some(c) = objects.index_of(&o.category) {
            if !picked.contains(&c) {
                picked.push(c);
            }
        }
    }
    for slot in 0..picked.len() {
        if rng.gen_bool(p_noise) {
            let others: Vec<usize> = (0..objects.len()).filter(|c| !picked.contains(c)).collect();
            if let Some(&c) = others.choose(rng) {
                picked[slot] = c;
            }
        }
    }
    // rank-based pseudo scores keep the listed order descending
    let mut object_scores = vec![0.0; objects.len()];
    let len = picked.len() as f64;
    for (rank, &c) in picked.iter().enumerate() {
        object_scores[c] = (len - rank as f64) / len;
    }

    Ok(ScenePercept {
        node_id: n.id.clone(),
        room: rooms.categories()[room].clone(),
        room_scores,
        objects: picked.iter().map(|&c| objects.categories()[c].clone()).collect(),
        object_scores,
    })
}

fn perceive_features(
    store: &FeatureStore,
    graph: &NavGraph,
    node: &str,
    k: usize,
    rooms: &Codebook,
    objects: &Codebook,
) -> Result<ScenePercept> {
    let n = graph.node(node)?;
    let mut views: Vec<Vec<f64>> = Vec::with_capacity(n.n_views);
    for v in 0..n.n_views {
        let key = view_feature_key(&n.id, v);
        let row = store
            .vector(&key)
            .ok_or_else(|| PerceiverError::MissingFeatures(key.clone()))?;
        views.push(row.iter().map(|&x| x as f64).collect());
    }
    let views = Matrix::from_rows(&views)?;
    let room_text = store.codebook_matrix(rooms)?;
    let object_text = store.codebook_matrix(objects)?;

    let (room, room_scores) = predict_room(&score_categories(&views, &room_text)?, rooms)?;
    let object_matrix = score_categories(&views, &object_text)?;
    let objects_top = predict_objects(&object_matrix, objects, k)?;
    Ok(ScenePercept {
        node_id: n.id.clone(),
        room,
        room_scores,
        objects: objects_top,
        object_scores: aggregate_object_scores(&object_matrix),
    })
}

/// [`perceive`] with a fresh generator seeded from `seed`.
pub fn perceive_seeded(
    source: &PerceiverSource<'_>,
    graph: &NavGraph,
    node: &str,
    k: usize,
    seed: u64,
) -> Result<ScenePercept> {
    perceive(source, graph, node, k, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// True iff there is a previous percept and its room differs.
pub fn room_changed(prev: Option<&ScenePercept>, cur: &ScenePercept) -> bool {
    prev.is_some_and(|p| p.room != cur.room)
}
