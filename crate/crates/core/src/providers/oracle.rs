//! Deterministic oracle backend computed from instance geometry.
//!
//! Embedding space: dimensions `0..32` are one basis direction per target
//! id, dimensions `32..64` hold per-crop noise. A crop covering fraction `α`
//! of target `t` embeds as `α·e_t + sqrt(1 - α²)·u` with `u` a seeded unit
//! noise vector orthogonal to every target direction.
//!
//! Confidence for a canvas is
//! `clamp(vis · A_ref / (A_ref + A_canvas) · 2, 0, 1)`, where `vis` is the
//! visible fraction of the question's target. For cross-instance questions
//! `vis` is the smaller of the two fractions, zeroed when the canvas breaks
//! the targets' original relative order. Pixels are never inspected.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::instance::{SyntheticInstance, Target, MAX_TARGET_ID};
use super::{ConfidenceProvider, EmbeddingProvider, YesProbability, UNANSWERABLE};
use crate::error::{ProviderError, Result};
use crate::grid::Crop;
use crate::layout::Canvas;
use crate::retrieval::Embedding;

pub const TARGET_DIMS: usize = MAX_TARGET_ID as usize + 1;
pub const NOISE_DIMS: usize = 32;
pub const ORACLE_DIM: usize = TARGET_DIMS + NOISE_DIMS;

#[derive(Debug, Clone)]
pub struct OracleProvider {
    instance: SyntheticInstance,
    threshold: f64,
    reference_area: u64,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(a.to_le_bytes());
    h.update(b.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

fn random_unit(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

impl OracleProvider {
    /// Oracle with threshold 0.6 and a reference area of four instance cells.
    pub fn new(instance: SyntheticInstance) -> Result<Self> {
        instance.validate()?;
        let cs = instance.cell_size as u64;
        Ok(Self {
            instance,
            threshold: 0.6,
            reference_area: 4 * cs * cs,
        })
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_reference_area(mut self, area: u64) -> Self {
        self.reference_area = area;
        self
    }

    pub fn instance(&self) -> &SyntheticInstance {
        &self.instance
    }

    pub fn reference_area(&self) -> u64 {
        self.reference_area
    }

    fn noise(&self, crop: &Crop) -> Vec<f64> {
        let seed = mix(
            self.instance.seed,
            crop.cell.row as u64,
            crop.cell.col as u64,
        );
        random_unit(&mut ChaCha8Rng::seed_from_u64(seed), NOISE_DIMS)
    }

    /// Fraction of `target`'s pixel area shown somewhere on the canvas.
    pub fn visible_fraction(&self, canvas: &Canvas, target: &Target) -> f64 {
        let rects = self.instance.target_rects(target);
        let shown: u64 = canvas
            .placements
            .iter()
            .map(|p| {
                rects
                    .iter()
                    .map(|r| p.source_rect.overlap_area(r))
                    .sum::<u64>()
            })
            .sum();
        shown as f64 / self.instance.target_area(target) as f64
    }

    /// Whether every original strict row/column separation between `a` and
    /// `b` still holds between their canvas cells.
    pub fn order_preserved(&self, canvas: &Canvas, a: &Target, b: &Target) -> bool {
        let cells_of = |t: &Target| -> Vec<(usize, usize)> {
            let rects = self.instance.target_rects(t);
            canvas
                .placements
                .iter()
                .filter(|p| rects.iter().any(|r| p.source_rect.overlap_area(r) > 0))
                .map(|p| (p.canvas.row, p.canvas.col))
                .collect()
        };
        let (ca, cb) = (cells_of(a), cells_of(b));
        if ca.is_empty() || cb.is_empty() {
            return false;
        }
        let span = |cells: &[(usize, usize)], axis: usize| {
            let it = cells.iter().map(|c| if axis == 0 { c.0 } else { c.1 });
            (it.clone().min().unwrap(), it.max().unwrap())
        };
        (0..2).all(|axis| match a.separation(b, axis) {
            None => true,
            Some(want) => {
                let (a0, a1) = span(&ca, axis);
                let (b0, b1) = span(&cb, axis);
                let got = if a1 < b0 {
                    Some(Ordering::Less)
                } else if a0 > b1 {
                    Some(Ordering::Greater)
                } else {
                    None
                };
                got == Some(want)
            }
        })
    }

    pub fn confidence(&self, canvas: &Canvas, query: &str) -> f64 {
        let targets = self.instance.targets_in(query);
        let vis = match targets.as_slice() {
            [] => 0.0,
            [t] => self.visible_fraction(canvas, t),
            [a, b, ..] => {
                let v = self
                    .visible_fraction(canvas, a)
                    .min(self.visible_fraction(canvas, b));
                if v > 0.0 && self.order_preserved(canvas, a, b) {
                    v
                } else {
                    0.0
                }
            }
        };
        let a_ref = self.reference_area as f64;
        (vis * a_ref / (a_ref + canvas.area() as f64) * 2.0).clamp(0.0, 1.0)
    }
}

impl EmbeddingProvider for OracleProvider {
    fn embed_query(&self, text: &str) -> Result<Embedding, ProviderError> {
        if text.is_empty() {
            return Err(ProviderError::InvalidInput("empty query".into()));
        }
        let targets = self.instance.targets_in(text);
        let mut v = vec![0.0; ORACLE_DIM];
        if targets.is_empty() {
            let digest = Sha256::new()
                .chain_update(self.instance.seed.to_le_bytes())
                .chain_update(text.as_bytes())
                .finalize();
            let seed = u64::from_le_bytes(digest[..8].try_into().unwrap());
            v = random_unit(&mut ChaCha8Rng::seed_from_u64(seed), ORACLE_DIM);
        } else {
            let w = 1.0 / (targets.len() as f64).sqrt();
            for t in targets {
                v[t.id as usize] = w;
            }
        }
        Embedding::new(v)
    }

    fn embed_image(&self, crop: &Crop) -> Result<Embedding, ProviderError> {
        let area = crop.rect.area();
        if area == 0 {
            return Err(ProviderError::InvalidInput("empty crop".into()));
        }
        let mut v = vec![0.0; ORACLE_DIM];
        let mut sq = 0.0;
        for t in &self.instance.targets {
            let covered: u64 = self
                .instance
                .target_rects(t)
                .iter()
                .map(|r| crop.rect.overlap_area(r))
                .sum();
            let alpha = covered as f64 / area as f64;
            v[t.id as usize] = alpha;
            sq += alpha * alpha;
        }
        let rest = (1.0 - sq).max(0.0).sqrt();
        if rest > 0.0 {
            for (slot, u) in v[TARGET_DIMS..].iter_mut().zip(self.noise(crop)) {
                *slot = rest * u;
            }
        }
        Embedding::new(v)
    }
}

impl ConfidenceProvider for OracleProvider {
    fn yes_probability(
        &self,
        canvas: &Canvas,
        query: &str,
    ) -> Result<YesProbability, ProviderError> {
        if query.is_empty() {
            return Err(ProviderError::InvalidInput("empty query".into()));
        }
        YesProbability::new(self.confidence(canvas, query))
    }

    fn answer(&self, canvas: &Canvas, query: &str) -> Result<String, ProviderError> {
        let c = self.yes_probability(canvas, query)?.value();
        Ok(if c > self.threshold {
            self.instance.answer_key.clone()
        } else {
            UNANSWERABLE.to_owned()
        })
    }
}
