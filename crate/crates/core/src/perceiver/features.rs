//! Binary feature store.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MICF" | version: u32 | dim: u32 | count: u32
//! count x { key_len: u16 | key: utf-8 | dim x f32 }
//! ```
//!
//! View features are keyed `node/view`. Text features for a codebook are
//! stored as consecutive records sharing the key `room_codebook` or
//! `object_codebook`, in codebook order.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Matrix, PerceiverError, Result};
use crate::codebook::{Codebook, CodebookKind};
use crate::world::{view_feature_key, NavGraph};

pub const FEATURE_MAGIC: &[u8; 4] = b"MICF";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    records: Vec<(String, Vec<f32>)>,
    index: HashMap<String, Vec<usize>>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            records: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, key: impl Into<String>, values: Vec<f32>) -> Result<()> {
        let key = key.into();
        if values.len() != self.dim {
            return Err(PerceiverError::DimensionMismatch {
                left: self.dim,
                right: values.len(),
            });
        }
        if key.len() > u16::MAX as usize {
            return Err(PerceiverError::Format(format!("key of {} bytes is too long", key.len())));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(PerceiverError::InvalidMatrix(format!("non-finite value under {key:?}")));
        }
        self.index.entry(key.clone()).or_default().push(self.records.len());
        self.records.push((key, values));
        Ok(())
    }

    /// First record stored under `key`.
    pub fn vector(&self, key: &str) -> Option<&[f32]> {
        self.index
            .get(key)
            .and_then(|ix| ix.first())
            .map(|&i| self.records[i].1.as_slice())
    }

    pub fn rows(&self, key: &str) -> Vec<&[f32]> {
        self.index
            .get(key)
            .map(|ix| ix.iter().map(|&i| self.records[i].1.as_slice()).collect())
            .unwrap_or_default()
    }

    /// Text features for a codebook, row-aligned with its categories.
    pub fn codebook_matrix(&self, codebook: &Codebook) -> Result<Matrix> {
        let key = codebook.kind().feature_key();
        let rows = self.rows(key);
        if rows.is_empty() {
            return Err(PerceiverError::MissingFeatures(key.to_string()));
        }
        if rows.len() != codebook.len() {
            return Err(PerceiverError::Format(format!(
                "{key} has {} rows for {} categories",
                rows.len(),
                codebook.len()
            )));
        }
        let data = rows.iter().flat_map(|r| r.iter().map(|&x| x as f64)).collect();
        Matrix::new(rows.len(), self.dim, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.records.len() * (8 + 4 * self.dim));
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for (key, values) in &self.records {
            out.extend_from_slice(&(key.len() as u16).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != FEATURE_MAGIC {
            return Err(PerceiverError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FEATURE_VERSION {
            return Err(PerceiverError::Format(format!("unsupported version {version}")));
        }
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(PerceiverError::Format("dim is zero".into()));
        }
        let count = r.u32()? as usize;
        let mut store = Self::new(dim);
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let key = std::str::from_utf8(r.take(len)?)
                .map_err(|e| PerceiverError::Format(format!("key is not utf-8: {e}")))?
                .to_string();
            let mut values = Vec::with_capacity(dim);
            for _ in 0..dim {
                values.push(f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")));
            }
            store.push(key, values)?;
        }
        if r.pos != bytes.len() {
            return Err(PerceiverError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(store)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_bytes())?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(PerceiverError::Format("truncated file".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Builds a feature store whose view features are a room signature plus the
/// signatures of the objects visible in the view, plus small noise. Useful
/// for exercising the feature-based perceiver without an image encoder.
pub fn synthesize_features(
    graph: &NavGraph,
    rooms: &Codebook,
    objects: &Codebook,
    dim: usize,
    seed: u64,
) -> Result<FeatureStore> {
    if dim == 0 {
        return Err(PerceiverError::InvalidMatrix("dim must be > 0".into()));
    }
    const ROOM_GAIN: f64 = 6.0;
    const OBJECT_GAIN: f64 = 8.0;
    const NOISE: f64 = 0.05;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let room_vecs: Vec<Vec<f64>> = (0..rooms.len()).map(|_| random_unit(&mut rng, dim)).collect();
    let object_vecs: Vec<Vec<f64>> = (0..objects.len()).map(|_| random_unit(&mut rng, dim)).collect();

    let mut store = FeatureStore::new(dim);
    let as_f32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
    for v in &room_vecs {
        store.push(CodebookKind::Room.feature_key(), as_f32(v))?;
    }
    for v in &object_vecs {
        store.push(CodebookKind::Object.feature_key(), as_f32(v))?;
    }

    for node in graph.nodes() {
        let room = rooms
            .index_of(&node.room)
            .ok_or_else(|| PerceiverError::UnknownCategory(node.room.clone()))?;
        let pano = graph.observe(&node.id)?;
        for view in &pano.views {
            let mut f: Vec<f64> = room_vecs[room].iter().map(|x| x * ROOM_GAIN).collect();
            for oid in &view.visible_object_ids {
                let (_, o) = graph.object(oid).expect("object from panorama exists");
                let c = objects
                    .index_of(&o.category)
                    .ok_or_else(|| PerceiverError::UnknownCategory(o.category.clone()))?;
                for (x, y) in f.iter_mut().zip(&object_vecs[c]) {
                    *x += OBJECT_GAIN * y;
                }
            }
            for x in f.iter_mut() {
                *x += rng.gen_range(-NOISE..NOISE);
            }
            store.push(view_feature_key(&node.id, view.view_index), as_f32(&f))?;
        }
    }
    Ok(store)
}
