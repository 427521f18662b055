//! Synthetic perception instances: coloured rectangular targets planted on a
//! crop lattice, with a question that refers to targets by `#id`.

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{PixelRect, SourceImage, MIN_CELL_SIZE};

/// Target ids index the first block of the oracle embedding space.
pub const MAX_TARGET_ID: u32 = 31;
pub const DEFAULT_INSTANCE_CELL: u32 = 32;
const BACKGROUND: [u8; 3] = [96, 96, 96];

pub const PALETTE: [(&str, [u8; 3]); 10] = [
    ("red", [220, 30, 30]),
    ("green", [30, 180, 60]),
    ("blue", [30, 60, 220]),
    ("yellow", [235, 220, 40]),
    ("cyan", [40, 210, 220]),
    ("magenta", [210, 40, 200]),
    ("orange", [240, 140, 20]),
    ("purple", [120, 40, 160]),
    ("white", [250, 250, 250]),
    ("pink", [250, 160, 190]),
];

pub fn colour_of(name: &str) -> [u8; 3] {
    PALETTE
        .iter()
        .find(|(n, _)| *n == name)
        .map_or([160, 160, 160], |(_, rgb)| *rgb)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuestionKind {
    SingleInstance,
    CrossInstanceSpatial,
}

impl QuestionKind {
    pub fn label(self) -> &'static str {
        match self {
            QuestionKind::SingleInstance => "single-instance",
            QuestionKind::CrossInstanceSpatial => "cross-instance-spatial",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub id: u32,
    /// Covered lattice cells as `[row, col]`.
    pub cells: Vec<[usize; 2]>,
    pub attribute: String,
}

impl Target {
    fn span(&self, axis: usize) -> (usize, usize) {
        let it = self.cells.iter().map(|c| c[axis]);
        (it.clone().min().unwrap_or(0), it.max().unwrap_or(0))
    }

    /// Strict ordering of `self` against `other` along rows (`axis = 0`) or
    /// columns (`axis = 1`); `None` when their extents overlap.
    pub fn separation(&self, other: &Target, axis: usize) -> Option<Ordering> {
        let (a0, a1) = self.span(axis);
        let (b0, b1) = other.span(axis);
        if a1 < b0 {
            Some(Ordering::Less)
        } else if a0 > b1 {
            Some(Ordering::Greater)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticInstance {
    pub id: String,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Edge of one lattice cell in rendered pixels.
    #[serde(default = "default_cell")]
    pub cell_size: u32,
    pub targets: Vec<Target>,
    pub question: String,
    pub question_kind: QuestionKind,
    pub answer_key: String,
    pub seed: u64,
}

fn default_cell() -> u32 {
    DEFAULT_INSTANCE_CELL
}

/// `#<digits>` references in order of appearance, without repeats.
pub fn mentioned_ids(text: &str) -> Vec<u32> {
    let mut ids = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'#' {
            let start = i + 1;
            let mut end = start;
            while end < bytes.len() && bytes[end].is_ascii_digit() {
                end += 1;
            }
            if end > start {
                if let Ok(id) = text[start..end].parse::<u32>() {
                    if !ids.contains(&id) {
                        ids.push(id);
                    }
                }
            }
            i = end.max(i + 1);
        } else {
            i += 1;
        }
    }
    ids
}

impl SyntheticInstance {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(format!("instance {}: {msg}", self.id)));
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return bad("empty grid".into());
        }
        if self.cell_size < MIN_CELL_SIZE {
            return bad(format!(
                "cell_size {} below {MIN_CELL_SIZE}",
                self.cell_size
            ));
        }
        let mut owner = vec![None; self.grid_rows * self.grid_cols];
        for t in &self.targets {
            if t.id > MAX_TARGET_ID {
                return bad(format!("target id {} above {MAX_TARGET_ID}", t.id));
            }
            if t.cells.is_empty() {
                return bad(format!("target {} has no cells", t.id));
            }
            if self.targets.iter().filter(|o| o.id == t.id).count() > 1 {
                return bad(format!("duplicate target id {}", t.id));
            }
            for &[r, c] in &t.cells {
                if r >= self.grid_rows || c >= self.grid_cols {
                    return bad(format!("target {} cell ({r}, {c}) outside grid", t.id));
                }
                let slot = &mut owner[r * self.grid_cols + c];
                if let Some(other) = *slot {
                    if other != t.id {
                        return bad(format!("targets {other} and {} overlap", t.id));
                    }
                }
                *slot = Some(t.id);
            }
        }
        let referenced = self.question_targets();
        let want = match self.question_kind {
            QuestionKind::SingleInstance => 1,
            QuestionKind::CrossInstanceSpatial => 2,
        };
        if referenced.len() != want {
            return bad(format!(
                "{} question references {} targets, expected {want}",
                self.question_kind.label(),
                referenced.len()
            ));
        }
        if want == 2
            && referenced[0].separation(referenced[1], 0).is_none()
            && referenced[0].separation(referenced[1], 1).is_none()
        {
            return bad("cross-instance targets have no definite relation".into());
        }
        Ok(())
    }

    pub fn target(&self, id: u32) -> Option<&Target> {
        self.targets.iter().find(|t| t.id == id)
    }

    /// Known targets mentioned in `text`.
    pub fn targets_in<'a>(&'a self, text: &str) -> Vec<&'a Target> {
        mentioned_ids(text)
            .into_iter()
            .filter_map(|id| self.target(id))
            .collect()
    }

    pub fn question_targets(&self) -> Vec<&Target> {
        self.targets_in(&self.question)
    }

    pub fn cell_rect(&self, row: usize, col: usize) -> PixelRect {
        let cs = self.cell_size;
        PixelRect::new(col as u32 * cs, row as u32 * cs, cs, cs)
    }

    pub fn target_rects(&self, t: &Target) -> Vec<PixelRect> {
        t.cells.iter().map(|&[r, c]| self.cell_rect(r, c)).collect()
    }

    pub fn target_area(&self, t: &Target) -> u64 {
        t.cells.len() as u64 * (self.cell_size as u64).pow(2)
    }

    pub fn width(&self) -> u32 {
        self.grid_cols as u32 * self.cell_size
    }

    pub fn height(&self) -> u32 {
        self.grid_rows as u32 * self.cell_size
    }

    /// Grey background with each target painted in its attribute colour.
    pub fn render(&self) -> Result<SourceImage> {
        let mut img = SourceImage::filled(self.width(), self.height(), BACKGROUND)?;
        for t in &self.targets {
            let rgb = colour_of(&t.attribute);
            for rect in self.target_rects(t) {
                img.fill_rect(rect, rgb);
            }
        }
        Ok(img)
    }
}

/// Reads instances, one JSON document per line.
pub fn read_suite(input: impl BufRead) -> Result<Vec<SyntheticInstance>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: SyntheticInstance = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidInput(format!("suite line {}: {e}", n + 1)))?;
        inst.validate()?;
        out.push(inst);
    }
    Ok(out)
}

pub fn write_suite(instances: &[SyntheticInstance], mut out: impl Write) -> Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut out, inst)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn fsp() -> SyntheticInstance {
        SyntheticInstance {
            id: "t0".into(),
            grid_rows: 4,
            grid_cols: 4,
            cell_size: 16,
            targets: vec![
                Target {
                    id: 3,
                    cells: vec![[1, 2]],
                    attribute: "red".into(),
                },
                Target {
                    id: 5,
                    cells: vec![[3, 0], [3, 1]],
                    attribute: "blue".into(),
                },
            ],
            question: "What is the colour of object #3?".into(),
            question_kind: QuestionKind::SingleInstance,
            answer_key: "red".into(),
            seed: 7,
        }
    }

    #[test]
    fn id_parsing() {
        assert_eq!(mentioned_ids("Is #2 left of #15? #2"), vec![2, 15]);
        assert!(mentioned_ids("no ids # here #x").is_empty());
    }

    #[test]
    fn validation() {
        let ok = fsp();
        ok.validate().unwrap();
        let mut bad = ok.clone();
        bad.targets[0].cells = vec![[4, 0]];
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.targets[1].cells.push([1, 2]);
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.question_kind = QuestionKind::CrossInstanceSpatial;
        assert!(bad.validate().is_err());
        let mut bad = ok;
        bad.question = "Is #3 left of #5?".into();
        bad.question_kind = QuestionKind::CrossInstanceSpatial;
        bad.validate().unwrap();
    }

    #[test]
    fn render_paints_targets() {
        let inst = fsp();
        let img = inst.render().unwrap();
        assert_eq!((img.width(), img.height()), (64, 64));
        assert_eq!(img.pixel(2 * 16 + 3, 16 + 3), colour_of("red"));
        assert_eq!(img.pixel(0, 0), BACKGROUND);
        assert_eq!(img.pixel(20, 50), colour_of("blue"));
    }

    #[test]
    fn suite_io() {
        let inst = vec![fsp(), fsp()];
        let mut buf = Vec::new();
        write_suite(&inst, &mut buf).unwrap();
        assert_eq!(read_suite(buf.as_slice()).unwrap(), inst);
    }
}
