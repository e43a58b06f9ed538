//! Exact cosine top-n retrieval over an immutable in-memory index.
//!
//! Vectors are stored unit-normalized in one flat buffer, so a query is a
//! single scan of dot products. Results are ordered by score descending with
//! ties broken by ascending document id, which makes the output independent
//! of insertion order.

mod embed;
mod persist;

use std::cmp::Ordering;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{Embedder, MockEmbedder, RemoteEmbedder, RemoteEmbedderConfig, MOCK_DIM};
pub use persist::{INDEX_MAGIC, INDEX_VERSION};

/// Default number of documents retrieved per query.
pub const DEFAULT_TOP_N: usize = 5;

const PARALLEL_SCAN_THRESHOLD: usize = 8192;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("text to embed must not be empty")]
    EmptyText,
    #[error("dimension mismatch: index has {expected}, vector has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding dimension must be positive")]
    ZeroDimension,
    #[error("embedding has non-finite entries")]
    NonFinite,
    #[error("embedding has zero norm")]
    ZeroVector,
    #[error("index is empty")]
    EmptyIndex,
    #[error("n must be at least 1")]
    ZeroN,
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("index file version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("index file is corrupt: {0}")]
    Corrupt(String),
    #[error("embedding backend quota exhausted (retry after {retry_after:?})")]
    Quota { retry_after: Option<Duration> },
    #[error("embedding backend failed: {0}")]
    Backend(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, IndexError> {
        if values.is_empty() {
            return Err(IndexError::ZeroDimension);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IndexError::NonFinite);
        }
        Ok(Embedding(values))
    }

    /// Scales to unit L2 norm.
    pub fn normalized(values: Vec<f64>) -> Result<Self, IndexError> {
        let mut e = Self::new(values)?;
        let norm = e.norm();
        if norm == 0.0 {
            return Err(IndexError::ZeroVector);
        }
        e.0.iter_mut().for_each(|v| *v /= norm);
        Ok(e)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        dot(&self.0, &other.0)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One result of [`VectorIndex::top_n`]. `rank` is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    /// Unit-normalized rows, `ids.len() * dim` values.
    vectors: Vec<f64>,
}

/// Collects `(id, embedding)` pairs; the built index is read-only.
#[derive(Debug)]
pub struct IndexBuilder {
    index: VectorIndex,
    seen: std::collections::HashSet<String>,
}

impl IndexBuilder {
    pub fn new(dim: usize) -> Result<Self, IndexError> {
        if dim == 0 {
            return Err(IndexError::ZeroDimension);
        }
        Ok(IndexBuilder {
            index: VectorIndex {
                dim,
                ids: Vec::new(),
                vectors: Vec::new(),
            },
            seen: Default::default(),
        })
    }

    /// Reopens a built index for appending.
    pub fn from_index(index: VectorIndex) -> Self {
        let seen = index.ids.iter().cloned().collect();
        IndexBuilder { index, seen }
    }

    pub fn add(&mut self, id: impl Into<String>, embedding: &Embedding) -> Result<(), IndexError> {
        let id = id.into();
        if embedding.dim() != self.index.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.index.dim,
                found: embedding.dim(),
            });
        }
        let norm = embedding.norm();
        if norm == 0.0 {
            return Err(IndexError::ZeroVector);
        }
        if !self.seen.insert(id.clone()) {
            return Err(IndexError::DuplicateId(id));
        }
        self.index.ids.push(id);
        self.index.vectors.extend(embedding.values().iter().map(|v| v / norm));
        Ok(())
    }

    pub fn build(self) -> VectorIndex {
        self.index
    }
}

impl VectorIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// The `n` most cosine-similar documents, best first.
    pub fn top_n(&self, query: &Embedding, n: usize) -> Result<Vec<Neighbor>, IndexError> {
        if n == 0 {
            return Err(IndexError::ZeroN);
        }
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        if self.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        let norm = query.norm();
        if norm == 0.0 {
            return Err(IndexError::ZeroVector);
        }
        let q: Vec<f64> = query.values().iter().map(|v| v / norm).collect();
        let score = |i: usize| (dot(&q, self.row(i)).clamp(-1.0, 1.0), i);

        let best = if self.len() >= PARALLEL_SCAN_THRESHOLD {
            (0..self.len())
                .into_par_iter()
                .fold(Vec::new, |mut acc, i| {
                    push_bounded(&mut acc, score(i), n, &self.ids);
                    acc
                })
                .reduce(Vec::new, |mut a, b| {
                    for c in b {
                        push_bounded(&mut a, c, n, &self.ids);
                    }
                    a
                })
        } else {
            let mut acc = Vec::with_capacity(n + 1);
            for i in 0..self.len() {
                push_bounded(&mut acc, score(i), n, &self.ids);
            }
            acc
        };

        Ok(best
            .into_iter()
            .enumerate()
            .map(|(r, (score, i))| Neighbor {
                id: self.ids[i].clone(),
                score,
                rank: r + 1,
            })
            .collect())
    }
}

fn ranking(a: &(f64, usize), b: &(f64, usize), ids: &[String]) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| ids[a.1].cmp(&ids[b.1]))
}

/// Keeps `acc` sorted best-first and at most `n` long.
fn push_bounded(acc: &mut Vec<(f64, usize)>, cand: (f64, usize), n: usize, ids: &[String]) {
    if acc.len() == n {
        match acc.last() {
            Some(worst) if ranking(&cand, worst, ids) != Ordering::Less => return,
            _ => {}
        }
    }
    let pos = acc
        .binary_search_by(|probe| ranking(probe, &cand, ids))
        .unwrap_or_else(|p| p);
    acc.insert(pos, cand);
    acc.truncate(n);
}
