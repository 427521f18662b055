//! Generic best-first engine with lazily evaluated heuristics.
//!
//! Nodes are ordered by `f = (1 - w(d)) * g + w(d) * h`, then by depth
//! (shallower first), then by insertion order. A node's heuristic is
//! evaluated only when it is popped. Until then a child carries its parent's
//! heuristic (or a cheap hint from the search space). If the evaluated `f`
//! exceeds the best remaining frontier entry, the node is pushed back with
//! the corrected cost instead of being acted on.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::cost::f_cost;
use crate::error::Error;

/// Provisional heuristic for the root, before anything is known.
const ROOT_PRIOR_H: f64 = 1.0;

pub trait SearchSpace {
    type State: Clone;

    /// Retrieval cost of a state; expected to be cheap.
    fn g(&self, state: &Self::State) -> f64;

    /// Heuristic available without an expensive evaluation, if any.
    fn h_hint(&self, _state: &Self::State) -> Option<f64> {
        None
    }

    /// The expensive heuristic. Called at most once per node.
    fn evaluate_h(&mut self, state: &Self::State) -> Result<f64, Error>;

    fn children(&mut self, state: &Self::State) -> Vec<Self::State>;
}

#[derive(Debug, Clone, Copy)]
pub struct EngineConfig {
    pub bias: f64,
    pub threshold: f64,
    pub max_depth: u32,
    pub max_expansions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    ThresholdMet,
    FrontierExhausted,
    BudgetExhausted,
}

/// What happened when a node left the frontier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PopAction {
    /// Confidence crossed the threshold.
    Terminate,
    Expand,
    /// Depth limit reached; not expanded.
    Leaf,
    /// Evaluated cost was worse than the frontier minimum.
    Repush,
    /// Expansion budget spent.
    Budget,
}

#[derive(Debug, Clone)]
pub struct NodeRecord<S> {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: u32,
    pub state: S,
    pub g: f64,
    pub h: Option<f64>,
    pub push_f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopEvent {
    pub node: usize,
    pub f: f64,
    pub g: f64,
    pub h: f64,
    pub depth: u32,
    pub action: PopAction,
}

#[derive(Debug, Clone)]
pub struct EngineRun<S> {
    pub nodes: Vec<NodeRecord<S>>,
    pub pops: Vec<PopEvent>,
    pub selected: usize,
    pub termination: Termination,
    pub expansions: usize,
}

#[derive(Debug)]
pub struct EngineAbort<S> {
    pub error: Error,
    pub nodes: Vec<NodeRecord<S>>,
    pub pops: Vec<PopEvent>,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    f: f64,
    depth: u32,
    seq: u64,
    node: usize,
}

impl Entry {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.f
            .total_cmp(&other.f)
            .then(self.depth.cmp(&other.depth))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // BinaryHeap is a max-heap; reverse so the smallest key pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.key_cmp(self)
    }
}

struct Frontier {
    heap: BinaryHeap<Entry>,
    seq: u64,
}

impl Frontier {
    fn push(&mut self, node: usize, f: f64, depth: u32) {
        self.heap.push(Entry {
            f,
            depth,
            seq: self.seq,
            node,
        });
        self.seq += 1;
    }
}

pub fn best_first<S: SearchSpace>(
    space: &mut S,
    root: S::State,
    cfg: &EngineConfig,
) -> Result<EngineRun<S::State>, EngineAbort<S::State>> {
    let mut nodes: Vec<NodeRecord<S::State>> = Vec::new();
    let mut pops = Vec::new();
    let mut frontier = Frontier {
        heap: BinaryHeap::new(),
        seq: 0,
    };
    let mut expansions = 0usize;
    // (confidence, node) of the best evaluated node, first wins on ties
    let mut best_c: Option<(f64, usize)> = None;

    macro_rules! cost {
        ($g:expr, $h:expr, $d:expr) => {
            f_cost($g, $h, $d, cfg.bias).expect("depth >= 1")
        };
    }

    let g0 = space.g(&root);
    let h0 = space.h_hint(&root).unwrap_or(ROOT_PRIOR_H);
    nodes.push(NodeRecord {
        id: 0,
        parent: None,
        depth: 1,
        state: root,
        g: g0,
        h: None,
        push_f: cost!(g0, h0, 1),
    });
    frontier.push(0, nodes[0].push_f, 1);

    let termination = loop {
        let Some(entry) = frontier.heap.pop() else {
            break Termination::FrontierExhausted;
        };
        let id = entry.node;
        let depth = nodes[id].depth;
        let g = nodes[id].g;

        let (h, f) = match nodes[id].h {
            Some(h) => (h, entry.f),
            None => {
                let h = match space.evaluate_h(&nodes[id].state) {
                    Ok(h) => h,
                    Err(error) => return Err(EngineAbort { error, nodes, pops }),
                };
                nodes[id].h = Some(h);
                let c = 1.0 - h;
                if best_c.is_none_or(|(bc, _)| c > bc) {
                    best_c = Some((c, id));
                }
                let f = cost!(g, h, depth);
                if frontier.heap.peek().is_some_and(|min| f > min.f) {
                    pops.push(PopEvent {
                        node: id,
                        f,
                        g,
                        h,
                        depth,
                        action: PopAction::Repush,
                    });
                    frontier.push(id, f, depth);
                    continue;
                }
                (h, f)
            }
        };

        let mut event = PopEvent {
            node: id,
            f,
            g,
            h,
            depth,
            action: PopAction::Expand,
        };
        if 1.0 - h > cfg.threshold {
            event.action = PopAction::Terminate;
            pops.push(event);
            best_c = Some((1.0 - h, id));
            break Termination::ThresholdMet;
        }
        if depth >= cfg.max_depth {
            event.action = PopAction::Leaf;
            pops.push(event);
            continue;
        }
        if expansions >= cfg.max_expansions {
            event.action = PopAction::Budget;
            pops.push(event);
            break Termination::BudgetExhausted;
        }
        pops.push(event);
        expansions += 1;

        let state = nodes[id].state.clone();
        for child in space.children(&state) {
            let cid = nodes.len();
            let cg = space.g(&child);
            let ch = space.h_hint(&child).unwrap_or(h);
            let cf = cost!(cg, ch, depth + 1);
            nodes.push(NodeRecord {
                id: cid,
                parent: Some(id),
                depth: depth + 1,
                state: child,
                g: cg,
                h: None,
                push_f: cf,
            });
            frontier.push(cid, cf, depth + 1);
        }
    };

    let selected = best_c.map_or(0, |(_, id)| id);
    Ok(EngineRun {
        nodes,
        pops,
        selected,
        termination,
        expansions,
    })
}
