//! Query-to-crop dissimilarity scoring and top-K crop selection.
//!
//! Scores are dissimilarities: `s(q, v) = (1 - cos(q, v)) / 2`, so 0 means the
//! crop points the same way as the query and 1 means opposite. Selecting the
//! "most relevant" crops therefore keeps the *smallest* scores.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ProviderError, Result};
use crate::grid::{BitMatrix, Cell, CropGrid};
use crate::par;
use crate::providers::EmbeddingProvider;

/// Binary keep/drop matrix over the crop lattice.
pub type RetentionMask = BitMatrix;

/// A dense, nonzero, finite embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, ProviderError> {
        if values.is_empty() {
            return Err(ProviderError::InvalidInput("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::InvalidInput(
                "non-finite embedding component".into(),
            ));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(ProviderError::InvalidInput("zero-norm embedding".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = ProviderError;

    fn try_from(values: Vec<f64>) -> Result<Self, ProviderError> {
        Embedding::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

/// `(1 - cos(q, v)) / 2`, clamped to `[0, 1]` against rounding.
pub fn similarity(q: &Embedding, v: &Embedding) -> Result<f64> {
    if q.dim() != v.dim() {
        return Err(Error::InvalidInput(format!(
            "embedding dimensions differ: {} vs {}",
            q.dim(),
            v.dim()
        )));
    }
    let (nq, nv) = (q.norm(), v.norm());
    if nq == 0.0 || nv == 0.0 {
        return Err(Error::InvalidInput("zero-norm embedding".into()));
    }
    let dot: f64 = q.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    let cos = (dot / (nq * nv)).clamp(-1.0, 1.0);
    Ok(((1.0 - cos) * 0.5).clamp(0.0, 1.0))
}

/// Per-crop dissimilarity aligned with a [`CropGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    scores: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize, scores: Vec<f64>) -> Result<Self> {
        if rows * cols != scores.len() || scores.is_empty() {
            return Err(Error::InvalidInput(format!(
                "{} scores for a {rows}x{cols} grid",
                scores.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::InvalidInput(format!("score {bad} outside [0, 1]")));
        }
        Ok(Self { rows, cols, scores })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let c = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::InvalidInput("ragged score rows".into()));
        }
        Self::new(
            rows.len(),
            c,
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.cols + col]
    }

    pub fn at(&self, index: usize) -> f64 {
        self.scores[index]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }

    /// Row-major cell indices sorted by ascending score; ties keep
    /// row-major order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]).then(a.cmp(&b)));
        idx
    }
}

/// Keeps the `k` lowest-score cells; ties go to the earlier row-major cell.
pub fn top_k(scores: &ScoreMatrix, k: usize) -> Result<RetentionMask> {
    if k == 0 || k > scores.len() {
        return Err(Error::InvalidInput(format!(
            "k = {k} outside 1..={}",
            scores.len()
        )));
    }
    let cells = scores
        .ranking()
        .into_iter()
        .take(k)
        .map(|i| Cell::new(i / scores.cols, i % scores.cols));
    BitMatrix::from_cells(scores.rows, scores.cols, cells)
}

/// Concurrent-safe memo of embeddings. Crops are keyed by
/// `(image digest, cell index)`, queries by text.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    crops: Mutex<HashMap<([u8; 32], usize), Embedding>>,
    queries: Mutex<HashMap<String, Embedding>>,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn crop_entries(&self) -> usize {
        self.crops.lock().unwrap().len()
    }

    fn query(&self, provider: &dyn EmbeddingProvider, text: &str) -> Result<Embedding> {
        if let Some(e) = self.queries.lock().unwrap().get(text) {
            return Ok(e.clone());
        }
        let e = provider.embed_query(text).map_err(Error::provider)?;
        self.queries
            .lock()
            .unwrap()
            .insert(text.to_owned(), e.clone());
        Ok(e)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScoreOptions {
    /// Upper bound on concurrent crop embedding requests.
    pub max_in_flight: usize,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self { max_in_flight: 8 }
    }
}

/// Scores every crop of `grid` against `query_text`.
///
/// The query is embedded once. Crop embeddings go through `cache` and may be
/// requested concurrently. Any failure aborts the whole matrix; the error
/// names the first failing cell in row-major order.
pub fn score_crops(
    query_text: &str,
    grid: &CropGrid,
    provider: &dyn EmbeddingProvider,
    cache: &EmbeddingCache,
    opts: ScoreOptions,
) -> Result<ScoreMatrix> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty grid".into()));
    }
    let query = cache.query(provider, query_text)?;
    let digest = grid.digest();
    let cells: Vec<Cell> = grid.cells().collect();

    let results = par::map(&cells, opts.max_in_flight.max(1), |&cell| -> Result<f64> {
        let key = (digest, grid.index_of(cell));
        let cached = cache.crops.lock().unwrap().get(&key).cloned();
        let emb = match cached {
            Some(e) => e,
            None => {
                let crop = grid.crop_at(cell.row, cell.col)?;
                let e = provider
                    .embed_image(&crop)
                    .map_err(|e| Error::provider_at(cell, e))?;
                cache.crops.lock().unwrap().insert(key, e.clone());
                e
            }
        };
        if emb.dim() != query.dim() {
            return Err(Error::provider_at(
                cell,
                ProviderError::Protocol(format!(
                    "crop embedding dim {} differs from query dim {}",
                    emb.dim(),
                    query.dim()
                )),
            ));
        }
        similarity(&query, &emb)
    });

    let scores = results.into_iter().collect::<Result<Vec<f64>>>()?;
    ScoreMatrix::new(grid.rows(), grid.cols(), scores)
}
