//! One image, one question.

use std::sync::Arc;

use super::pipeline::Providers;
use crate::error::Result;
use crate::grid::{partition, Cell, SourceImage};
use crate::retrieval::{score_crops, EmbeddingCache, ScoreOptions};
use crate::search::{re_search, SearchParams, Termination, TraceEntry};

#[derive(Debug, Clone)]
pub struct SingleOutcome {
    pub answer: String,
    pub selected_k: usize,
    pub confidence: f64,
    pub final_cells: Vec<Cell>,
    pub expansions: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub trace: Vec<TraceEntry>,
}

/// Partitions, scores, searches and finally asks the question on the
/// selected canvas.
pub fn run_single(
    image: impl Into<Arc<SourceImage>>,
    question: &str,
    cell_size: u32,
    providers: &Providers,
    params: &SearchParams,
    opts: ScoreOptions,
) -> Result<SingleOutcome> {
    params.validate()?;
    let grid = partition(image, cell_size)?;
    let cache = EmbeddingCache::new();
    let scores = score_crops(question, &grid, providers.embed.as_ref(), &cache, opts)?;
    let out = re_search(
        &grid,
        &scores,
        providers.confidence.as_ref(),
        question,
        params,
    )?;
    let answer = providers
        .confidence
        .answer(&out.final_canvas, question)
        .map_err(crate::error::Error::provider)?;
    Ok(SingleOutcome {
        answer,
        selected_k: out.selected_k,
        confidence: out.confidence,
        final_cells: out.final_cells,
        expansions: out.expansions,
        evaluations: out.evaluations,
        termination: out.termination,
        trace: out.visit_trace,
    })
}
