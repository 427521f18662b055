//! Seeded generation of synthetic instance suites.
//!
//! Single-instance questions ask for the colour of one compact target
//! (1x1 up to 2x2 cells). Cross-instance questions ask for the relation of
//! two targets that sit side by side in a shared row band (left/right) or
//! one above the other in a shared column band (above/below). Every
//! instance also carries one distractor target that no question mentions.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::providers::instance::{
    write_suite, QuestionKind, SyntheticInstance, Target, DEFAULT_INSTANCE_CELL, MAX_TARGET_ID,
    PALETTE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteSpec {
    pub count: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub cell_size: u32,
    /// Share of single-instance questions; the count is rounded half up.
    pub single_fraction: f64,
    pub seed: u64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            count: 200,
            grid_rows: 8,
            grid_cols: 8,
            cell_size: DEFAULT_INSTANCE_CELL,
            single_fraction: 0.5,
            seed: 7,
        }
    }
}

#[derive(Clone, Copy)]
struct Block {
    row: usize,
    col: usize,
    h: usize,
    w: usize,
}

impl Block {
    fn cells(&self) -> Vec<[usize; 2]> {
        let mut out = Vec::with_capacity(self.h * self.w);
        for r in self.row..self.row + self.h {
            for c in self.col..self.col + self.w {
                out.push([r, c]);
            }
        }
        out
    }
}

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    taken: Vec<bool>,
}

impl Builder<'_> {
    fn free(&self, b: &Block) -> bool {
        b.row + b.h <= self.rows
            && b.col + b.w <= self.cols
            && b.cells()
                .iter()
                .all(|&[r, c]| !self.taken[r * self.cols + c])
    }

    fn claim(&mut self, b: &Block) {
        for [r, c] in b.cells() {
            self.taken[r * self.cols + c] = true;
        }
    }

    fn place(&mut self, h: usize, w: usize) -> Option<Block> {
        for _ in 0..1000 {
            let b = Block {
                row: self.rng.random_range(0..=self.rows - h),
                col: self.rng.random_range(0..=self.cols - w),
                h,
                w,
            };
            if self.free(&b) {
                self.claim(&b);
                return Some(b);
            }
        }
        None
    }

    /// Two blocks sharing a band, separated along the other axis.
    fn place_pair(&mut self, horizontal: bool) -> Option<(Block, Block)> {
        for _ in 0..1000 {
            let band = 2;
            let (wa, wb) = (self.rng.random_range(1..=2), self.rng.random_range(1..=2));
            let (len, span) = if horizontal {
                (self.cols, self.rows)
            } else {
                (self.rows, self.cols)
            };
            if wa + wb > len || band > span {
                return None;
            }
            let band_at = self.rng.random_range(0..=span - band);
            let first = self.rng.random_range(0..=len - wa - wb);
            let second = self.rng.random_range(first + wa..=len - wb);
            let (a, b) = if horizontal {
                (
                    Block {
                        row: band_at,
                        col: first,
                        h: band,
                        w: wa,
                    },
                    Block {
                        row: band_at,
                        col: second,
                        h: band,
                        w: wb,
                    },
                )
            } else {
                (
                    Block {
                        row: first,
                        col: band_at,
                        h: wa,
                        w: band,
                    },
                    Block {
                        row: second,
                        col: band_at,
                        h: wb,
                        w: band,
                    },
                )
            };
            if self.free(&a) && self.free(&b) {
                self.claim(&a);
                self.claim(&b);
                return Some((a, b));
            }
        }
        None
    }
}

fn instance_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 step over (seed, index)
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn make_instance(spec: &SuiteSpec, index: usize, kind: QuestionKind) -> Result<SyntheticInstance> {
    let seed = instance_seed(spec.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<u32> = (0..=MAX_TARGET_ID).collect();
    ids.shuffle(&mut rng);
    let mut colours: Vec<&str> = PALETTE.iter().map(|(n, _)| *n).collect();
    colours.shuffle(&mut rng);

    let mut b = Builder {
        rng: &mut rng,
        rows: spec.grid_rows,
        cols: spec.grid_cols,
        taken: vec![false; spec.grid_rows * spec.grid_cols],
    };
    let too_small = || {
        Error::InvalidConfig(format!(
            "grid {}x{} too small",
            spec.grid_rows, spec.grid_cols
        ))
    };

    let mut targets = Vec::new();
    let (question, answer_key) = match kind {
        QuestionKind::SingleInstance => {
            let (h, w) = (b.rng.random_range(1..=2), b.rng.random_range(1..=2));
            let block = b.place(h, w).ok_or_else(too_small)?;
            targets.push(Target {
                id: ids[0],
                cells: block.cells(),
                attribute: colours[0].into(),
            });
            (
                format!("What is the colour of object #{}?", ids[0]),
                colours[0].to_string(),
            )
        }
        QuestionKind::CrossInstanceSpatial => {
            let horizontal = b.rng.random_bool(0.5);
            let (first, second) = b.place_pair(horizontal).ok_or_else(too_small)?;
            targets.push(Target {
                id: ids[0],
                cells: first.cells(),
                attribute: colours[0].into(),
            });
            targets.push(Target {
                id: ids[1],
                cells: second.cells(),
                attribute: colours[1].into(),
            });
            // ask about either target relative to the other
            let (subject, object, subject_first) = if b.rng.random_bool(0.5) {
                (ids[0], ids[1], true)
            } else {
                (ids[1], ids[0], false)
            };
            let (q, ans) = if horizontal {
                (
                    format!(
                        "Is object #{subject} to the left or to the right of object #{object}?"
                    ),
                    if subject_first { "left" } else { "right" },
                )
            } else {
                (
                    format!("Is object #{subject} above or below object #{object}?"),
                    if subject_first { "above" } else { "below" },
                )
            };
            (q, ans.to_string())
        }
    };
    if let Some(block) = b.place(1, 1) {
        targets.push(Target {
            id: ids[2],
            cells: block.cells(),
            attribute: colours[2].into(),
        });
    }

    let inst = SyntheticInstance {
        id: format!("inst-{index:05}"),
        grid_rows: spec.grid_rows,
        grid_cols: spec.grid_cols,
        cell_size: spec.cell_size,
        targets,
        question,
        question_kind: kind,
        answer_key,
        seed,
    };
    inst.validate()?;
    Ok(inst)
}

/// Generates `spec.count` instances with an exact kind split.
pub fn gen_suite(spec: &SuiteSpec) -> Result<Vec<SyntheticInstance>> {
    if spec.count == 0 {
        return Err(Error::InvalidConfig("suite count must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&spec.single_fraction) {
        return Err(Error::InvalidConfig(
            "single_fraction outside [0, 1]".into(),
        ));
    }
    if spec.grid_rows < 2 || spec.grid_cols < 2 || spec.grid_rows.max(spec.grid_cols) < 4 {
        return Err(Error::InvalidConfig(format!(
            "grid {}x{} too small for cross-instance targets",
            spec.grid_rows, spec.grid_cols
        )));
    }
    let singles = ((spec.count as f64 * spec.single_fraction) + 0.5).floor() as usize;
    let mut kinds: Vec<QuestionKind> = (0..spec.count)
        .map(|i| {
            if i < singles {
                QuestionKind::SingleInstance
            } else {
                QuestionKind::CrossInstanceSpatial
            }
        })
        .collect();
    kinds.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    kinds
        .into_iter()
        .enumerate()
        .map(|(i, kind)| make_instance(spec, i, kind))
        .collect()
}

/// Generates a suite and writes it as JSON lines.
pub fn write_generated_suite(
    spec: &SuiteSpec,
    path: impl AsRef<Path>,
) -> Result<Vec<SyntheticInstance>> {
    let suite = gen_suite(spec)?;
    let mut buf = Vec::new();
    write_suite(&suite, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(suite)
}
