use std::collections::HashSet;
use std::io::{BufRead, Write};

use super::cost::{f_cost, g_cost, h_from_yes};
use super::engine::{best_first, EngineConfig, SearchSpace, Termination};
use super::{SearchParams, TraceEntry};
use crate::error::{Error, Result};
use crate::grid::{BitMatrix, Cell, CropGrid};
use crate::layout::{spatial_layout, Canvas};
use crate::providers::ConfidenceProvider;
use crate::retrieval::ScoreMatrix;

/// A retention state in the search tree.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchNode {
    /// Row-major cell indices, best (lowest) score first.
    pub retained: Vec<usize>,
    /// Root is depth 1.
    pub depth: u32,
    pub g: f64,
    pub h: Option<f64>,
    pub f: Option<f64>,
    /// Ratio that produced this node from its parent.
    pub ratio_used: Option<f64>,
}

impl SearchNode {
    /// The full-image state.
    pub fn root(scores: &ScoreMatrix) -> Result<Self> {
        let retained = scores.ranking();
        Ok(Self {
            g: g_cost(&retained, scores)?,
            retained,
            depth: 1,
            h: None,
            f: None,
            ratio_used: None,
        })
    }

    pub fn n(&self) -> usize {
        self.retained.len()
    }

    pub fn mask(&self, rows: usize, cols: usize) -> BitMatrix {
        let mut m = BitMatrix::zeros(rows, cols);
        for &i in &self.retained {
            m.set(i / cols, i % cols, true);
        }
        m
    }

    fn canonical(&self) -> Vec<usize> {
        let mut v = self.retained.clone();
        v.sort_unstable();
        v
    }
}

/// `max(1, round_half_up(n * p))`.
pub fn child_count(n: usize, p: f64) -> usize {
    // the epsilon keeps exact halves like 3 * 0.5 from landing just below .5
    (((n as f64) * p + 0.5 + 1e-9).floor() as usize).max(1)
}

/// One child per retention ratio, each keeping the lowest-score cells of
/// `node`. Children that would equal the parent or a previous sibling are
/// dropped.
pub fn expand(node: &SearchNode, scores: &ScoreMatrix, params: &SearchParams) -> Vec<SearchNode> {
    let mut ranked = node.retained.clone();
    ranked.sort_by(|&a, &b| scores.at(a).total_cmp(&scores.at(b)).then(a.cmp(&b)));
    let n = ranked.len();
    let mut seen_k = Vec::new();
    let mut children = Vec::new();
    for &p in &params.retention_ratios {
        let k = child_count(n, p);
        if k >= n || seen_k.contains(&k) {
            continue;
        }
        seen_k.push(k);
        let retained = ranked[..k].to_vec();
        children.push(SearchNode {
            g: g_cost(&retained, scores).expect("k >= 1"),
            retained,
            depth: node.depth + 1,
            h: None,
            f: None,
            ratio_used: Some(p),
        });
    }
    children
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub final_canvas: Canvas,
    /// Retained cells of the selected node, best score first.
    pub final_cells: Vec<Cell>,
    pub selected_k: usize,
    /// `1 - h` of the selected node.
    pub confidence: f64,
    pub visit_trace: Vec<TraceEntry>,
    pub expansions: usize,
    /// Heuristic evaluations, i.e. confidence provider calls.
    pub evaluations: usize,
    pub termination: Termination,
}

struct RetentionSpace<'a> {
    grid: &'a CropGrid,
    scores: &'a ScoreMatrix,
    provider: &'a dyn ConfidenceProvider,
    query: &'a str,
    params: &'a SearchParams,
    seen: HashSet<Vec<usize>>,
    evaluations: usize,
}

impl SearchSpace for RetentionSpace<'_> {
    type State = SearchNode;

    fn g(&self, state: &SearchNode) -> f64 {
        state.g
    }

    fn evaluate_h(&mut self, state: &SearchNode) -> Result<f64> {
        self.evaluations += 1;
        let canvas = spatial_layout(self.grid, &state.mask(self.grid.rows(), self.grid.cols()))?;
        let yes = self
            .provider
            .yes_probability(&canvas, self.query)
            .map_err(Error::provider)?;
        Ok(h_from_yes(yes.value()))
    }

    fn children(&mut self, state: &SearchNode) -> Vec<SearchNode> {
        expand(state, self.scores, self.params)
            .into_iter()
            .filter(|c| self.seen.insert(c.canonical()))
            .collect()
    }
}

fn cells_of(retained: &[usize], cols: usize) -> Vec<[usize; 2]> {
    retained.iter().map(|&i| [i / cols, i % cols]).collect()
}

/// Searches for the smallest answerable retention state.
///
/// Provider calls are issued one at a time in pop order, so the trace is
/// reproducible for deterministic providers.
pub fn re_search(
    grid: &CropGrid,
    scores: &ScoreMatrix,
    provider: &dyn ConfidenceProvider,
    query: &str,
    params: &SearchParams,
) -> Result<SearchOutcome> {
    params.validate()?;
    if grid.is_empty() || scores.rows() != grid.rows() || scores.cols() != grid.cols() {
        return Err(Error::InvalidInput(
            "score matrix does not match grid".into(),
        ));
    }
    let root = SearchNode::root(scores)?;
    let mut space = RetentionSpace {
        grid,
        scores,
        provider,
        query,
        params,
        seen: HashSet::from([root.canonical()]),
        evaluations: 0,
    };
    let cfg = EngineConfig {
        bias: params.bias,
        threshold: params.threshold,
        max_depth: params.max_depth,
        max_expansions: params.max_expansions,
    };
    let cols = grid.cols();
    let trace_of = |nodes: &[super::engine::NodeRecord<SearchNode>],
                    pops: &[super::engine::PopEvent]| {
        pops.iter()
            .map(|p| TraceEntry {
                node: p.node,
                parent: nodes[p.node].parent,
                retained: cells_of(&nodes[p.node].state.retained, cols),
                g: p.g,
                h: p.h,
                f: p.f,
                d: p.depth,
                action: p.action,
            })
            .collect::<Vec<_>>()
    };

    let run = match best_first(&mut space, root, &cfg) {
        Ok(run) => run,
        Err(abort) => {
            return Err(Error::SearchAborted {
                trace: trace_of(&abort.nodes, &abort.pops),
                source: Box::new(abort.error),
            })
        }
    };

    let chosen = &run.nodes[run.selected];
    let mut node = chosen.state.clone();
    let h = chosen.h.expect("selected node was evaluated");
    node.h = Some(h);
    node.f = Some(f_cost(node.g, h, node.depth, params.bias)?);
    let final_canvas = spatial_layout(grid, &node.mask(grid.rows(), grid.cols()))?;
    Ok(SearchOutcome {
        final_canvas,
        final_cells: node
            .retained
            .iter()
            .map(|&i| Cell::new(i / cols, i % cols))
            .collect(),
        selected_k: node.n(),
        confidence: 1.0 - h,
        visit_trace: trace_of(&run.nodes, &run.pops),
        expansions: run.expansions,
        evaluations: space.evaluations,
        termination: run.termination,
    })
}

/// Writes one JSON object per line.
pub fn write_trace_jsonl(trace: &[TraceEntry], mut out: impl Write) -> Result<()> {
    for entry in trace {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace_jsonl(input: impl BufRead) -> Result<Vec<TraceEntry>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
