use std::collections::{HashSet, VecDeque};

use super::cost::{f_cost, h_from_yes};
use super::retree::{expand, SearchNode};
use super::SearchParams;
use crate::error::{Error, Result};
use crate::grid::CropGrid;
use crate::layout::{spatial_layout, Canvas};
use crate::providers::ConfidenceProvider;
use crate::retrieval::ScoreMatrix;

/// Result of visiting every reachable retention state.
#[derive(Debug, Clone)]
pub struct ExhaustiveOutcome {
    pub final_canvas: Canvas,
    pub selected_k: usize,
    pub confidence: f64,
    pub expansions: usize,
    pub evaluations: usize,
    /// `(k, depth, f, confidence)` of every visited state, breadth-first.
    pub states: Vec<(usize, u32, f64, f64)>,
}

/// Breadth-first enumeration of the whole retention tree (up to
/// `max_depth`), evaluating the confidence of every state. Picks the
/// lowest-`f` state above the threshold, or the most confident one if none
/// qualifies. Used as the comparison baseline for the best-first search.
pub fn exhaustive_search(
    grid: &CropGrid,
    scores: &ScoreMatrix,
    provider: &dyn ConfidenceProvider,
    query: &str,
    params: &SearchParams,
) -> Result<ExhaustiveOutcome> {
    params.validate()?;
    let root = SearchNode::root(scores)?;
    let mut seen = HashSet::from([sorted(&root.retained)]);
    let mut queue = VecDeque::from([root]);
    let mut visited: Vec<(SearchNode, f64, f64)> = Vec::new();
    let mut expansions = 0;
    while let Some(node) = queue.pop_front() {
        let canvas = spatial_layout(grid, &node.mask(grid.rows(), grid.cols()))?;
        let yes = provider
            .yes_probability(&canvas, query)
            .map_err(Error::provider)?;
        let h = h_from_yes(yes.value());
        let f = f_cost(node.g, h, node.depth, params.bias)?;
        if node.depth < params.max_depth {
            let kids: Vec<SearchNode> = expand(&node, scores, params)
                .into_iter()
                .filter(|c| seen.insert(sorted(&c.retained)))
                .collect();
            expansions += 1;
            queue.extend(kids);
        }
        visited.push((node, f, 1.0 - h));
    }

    let passing = visited
        .iter()
        .filter(|(_, _, c)| *c > params.threshold)
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.depth.cmp(&b.0.depth)));
    let best = match passing {
        Some(v) => v,
        None => visited
            .iter()
            .reduce(|best, v| if v.2 > best.2 { v } else { best })
            .expect("root is always visited"),
    };
    let final_canvas = spatial_layout(grid, &best.0.mask(grid.rows(), grid.cols()))?;
    Ok(ExhaustiveOutcome {
        final_canvas,
        selected_k: best.0.n(),
        confidence: best.2,
        expansions,
        evaluations: visited.len(),
        states: visited
            .iter()
            .map(|(n, f, c)| (n.n(), n.depth, *f, *c))
            .collect(),
    })
}

fn sorted(v: &[usize]) -> Vec<usize> {
    let mut v = v.to_vec();
    v.sort_unstable();
    v
}
