//! Confidence-guided best-first search over retention states.
//!
//! The root keeps every crop. Each child keeps the best-scoring
//! `round(n * p)` crops of its parent for every retention ratio `p`, so
//! resolution shrinks with depth. Nodes are ranked by a blend of mean
//! retrieval cost `g` and answerability cost `h = 1 - P(yes)`. The blend
//! shifts towards `h` as depth grows.

mod cost;
pub mod engine;
mod exhaustive;
mod retree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cost::{depth_weight, f_cost, g_cost, h_from_yes};
pub use engine::{PopAction, Termination};
pub use exhaustive::{exhaustive_search, ExhaustiveOutcome};
pub use retree::{
    child_count, expand, re_search, read_trace_jsonl, write_trace_jsonl, SearchNode, SearchOutcome,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchParams {
    /// Strictly increasing ratios in (0, 1), one child per ratio.
    pub retention_ratios: Vec<f64>,
    /// Depth-weight floor `b`.
    pub bias: f64,
    /// Confidence threshold; the search stops once `1 - h` exceeds it.
    pub threshold: f64,
    pub max_depth: u32,
    pub max_expansions: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            retention_ratios: vec![0.25, 0.5, 0.75],
            bias: 0.2,
            threshold: 0.6,
            max_depth: 8,
            max_expansions: 64,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        let p = &self.retention_ratios;
        if p.is_empty() {
            return Err(Error::InvalidConfig("no retention ratios".into()));
        }
        if p.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return Err(Error::InvalidConfig(
                "retention ratios must lie in (0, 1)".into(),
            ));
        }
        if p.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "retention ratios must be strictly increasing".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.bias) {
            return Err(Error::InvalidConfig(format!(
                "bias {} outside [0, 1)",
                self.bias
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        if self.max_depth == 0 {
            return Err(Error::InvalidConfig("max_depth must be >= 1".into()));
        }
        Ok(())
    }
}

/// One line of the search trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub node: usize,
    pub parent: Option<usize>,
    /// Retained cells as `[row, col]`, best score first.
    pub retained: Vec<[usize; 2]>,
    pub g: f64,
    pub h: f64,
    pub f: f64,
    pub d: u32,
    pub action: PopAction,
}
