//! One instance through one pipeline variant.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grid::{partition, BitMatrix, CropGrid};
use crate::layout::{spatial_layout, strip_layout_by_score, Canvas, StripOrder};
use crate::providers::{ConfidenceProvider, EmbeddingProvider, OracleProvider, SyntheticInstance};
use crate::retrieval::{score_crops, top_k, EmbeddingCache, ScoreMatrix, ScoreOptions};
use crate::search::{exhaustive_search, re_search, SearchParams, TraceEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantKind {
    /// The whole image, no retrieval.
    BaselineFullImage,
    /// Top-K crops by ascending score, packed as a strip.
    FixedKStrategy1,
    /// Top-K crops in appearance order, packed as a strip.
    FixedKStrategy2,
    /// Top-K crops with the spatial layout.
    FixedKStrategy3,
    /// Retrieval, spatial layout and best-first search over K.
    RapFull,
    /// Every reachable retention state evaluated; comparison baseline.
    ExhaustiveSearch,
}

impl VariantKind {
    pub const ALL: [VariantKind; 6] = [
        VariantKind::BaselineFullImage,
        VariantKind::FixedKStrategy1,
        VariantKind::FixedKStrategy2,
        VariantKind::FixedKStrategy3,
        VariantKind::RapFull,
        VariantKind::ExhaustiveSearch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::BaselineFullImage => "baseline-full-image",
            VariantKind::FixedKStrategy1 => "fixed-k-strategy-1",
            VariantKind::FixedKStrategy2 => "fixed-k-strategy-2",
            VariantKind::FixedKStrategy3 => "fixed-k-strategy-3",
            VariantKind::RapFull => "rap-full",
            VariantKind::ExhaustiveSearch => "exhaustive-search",
        }
    }

    pub fn uses_fixed_k(self) -> bool {
        matches!(
            self,
            VariantKind::FixedKStrategy1
                | VariantKind::FixedKStrategy2
                | VariantKind::FixedKStrategy3
        )
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant {s:?}")))
    }
}

/// A number of crops to keep, or all of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KChoice {
    Count(usize),
    All,
}

impl KChoice {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            KChoice::Count(k) => k,
            KChoice::All => n,
        }
    }
}

impl fmt::Display for KChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KChoice::Count(k) => write!(f, "{k}"),
            KChoice::All => f.write_str("all"),
        }
    }
}

impl FromStr for KChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(KChoice::All);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(KChoice::Count(k)),
            _ => Err(Error::InvalidConfig(format!("bad k value {s:?}"))),
        }
    }
}

impl Serialize for KChoice {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            KChoice::Count(k) => s.serialize_u64(*k as u64),
            KChoice::All => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for KChoice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(usize),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(k) => KChoice::from_str(&k.to_string()),
            Raw::S(s) => KChoice::from_str(&s),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// Embedding and confidence backends for one instance.
#[derive(Clone)]
pub struct Providers {
    pub embed: Arc<dyn EmbeddingProvider>,
    pub confidence: Arc<dyn ConfidenceProvider>,
}

impl Providers {
    pub fn oracle(instance: &SyntheticInstance, threshold: f64) -> Result<Self> {
        let o = Arc::new(OracleProvider::new(instance.clone())?.with_threshold(threshold));
        Ok(Self {
            embed: o.clone(),
            confidence: o,
        })
    }

    pub fn shared<P: EmbeddingProvider + ConfidenceProvider + 'static>(p: P) -> Self {
        let p = Arc::new(p);
        Self {
            embed: p.clone(),
            confidence: p,
        }
    }
}

/// Outcome of one (instance, variant, k) run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub k_selected: usize,
    pub answer: String,
    pub confidence: Option<f64>,
    pub expansions: usize,
    pub evaluations: usize,
    pub trace: Vec<TraceEntry>,
    pub wall_ms: f64,
}

/// Everything a variant needs about an image.
pub struct Prepared {
    pub grid: CropGrid,
    pub scores: Option<ScoreMatrix>,
}

pub fn prepare(
    instance: &SyntheticInstance,
    providers: &Providers,
    need_scores: bool,
    opts: ScoreOptions,
) -> Result<Prepared> {
    let grid = partition(instance.render()?, instance.cell_size)?;
    let scores = if need_scores {
        let cache = EmbeddingCache::new();
        Some(score_crops(
            &instance.question,
            &grid,
            providers.embed.as_ref(),
            &cache,
            opts,
        )?)
    } else {
        None
    };
    Ok(Prepared { grid, scores })
}

/// Runs one variant on an instance, timing the whole pipeline including
/// rendering and retrieval.
pub fn run_variant(
    instance: &SyntheticInstance,
    variant: VariantKind,
    k: Option<KChoice>,
    providers: &Providers,
    params: &SearchParams,
    opts: ScoreOptions,
) -> Result<RunRecord> {
    let start = Instant::now();
    let need_scores = variant != VariantKind::BaselineFullImage;
    let prep = prepare(instance, providers, need_scores, opts)?;
    let grid = &prep.grid;
    let query = instance.question.as_str();
    let conf = providers.confidence.as_ref();

    let fixed = |order: Option<StripOrder>| -> Result<(Canvas, usize)> {
        let scores = prep.scores.as_ref().expect("scored");
        let k = k
            .ok_or_else(|| Error::InvalidConfig(format!("{variant} needs a k value")))?
            .resolve(grid.len());
        if k > grid.len() {
            return Err(Error::InvalidConfig(format!(
                "k = {k} exceeds {} crops of {}",
                grid.len(),
                instance.id
            )));
        }
        let mask = top_k(scores, k)?;
        let canvas = match order {
            None => spatial_layout(grid, &mask)?,
            Some(order) => strip_layout_by_score(grid, &mask, scores, order)?,
        };
        Ok((canvas, k))
    };

    let (canvas, k_selected, confidence, expansions, evaluations, trace) = match variant {
        VariantKind::BaselineFullImage => {
            let canvas = spatial_layout(grid, &BitMatrix::ones(grid.rows(), grid.cols()))?;
            (canvas, grid.len(), None, 0, 0, Vec::new())
        }
        VariantKind::FixedKStrategy1 => {
            let (c, k) = fixed(Some(StripOrder::ScoreAscending))?;
            (c, k, None, 0, 0, Vec::new())
        }
        VariantKind::FixedKStrategy2 => {
            let (c, k) = fixed(Some(StripOrder::Appearance))?;
            (c, k, None, 0, 0, Vec::new())
        }
        VariantKind::FixedKStrategy3 => {
            let (c, k) = fixed(None)?;
            (c, k, None, 0, 0, Vec::new())
        }
        VariantKind::RapFull => {
            let out = re_search(
                grid,
                prep.scores.as_ref().expect("scored"),
                conf,
                query,
                params,
            )?;
            (
                out.final_canvas,
                out.selected_k,
                Some(out.confidence),
                out.expansions,
                out.evaluations,
                out.visit_trace,
            )
        }
        VariantKind::ExhaustiveSearch => {
            let out = exhaustive_search(
                grid,
                prep.scores.as_ref().expect("scored"),
                conf,
                query,
                params,
            )?;
            (
                out.final_canvas,
                out.selected_k,
                Some(out.confidence),
                out.expansions,
                out.evaluations,
                Vec::new(),
            )
        }
    };
    let answer = conf.answer(&canvas, query).map_err(Error::provider)?;
    Ok(RunRecord {
        k_selected,
        answer,
        confidence,
        expansions,
        evaluations,
        trace,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

pub fn is_correct(answer: &str, key: &str) -> bool {
    answer.trim().eq_ignore_ascii_case(key.trim())
}
