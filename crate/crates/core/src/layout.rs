//! Recomposing retained crops into a smaller canvas.
//!
//! [`spatial_layout`] drops every all-zero row and column of the retention
//! mask and packs the surviving cells so that relative row and column order
//! is kept. The strip layouts are the two order-agnostic baselines: crops
//! concatenated by ascending score or by original appearance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BitMatrix, Cell, CropGrid, PixelRect, SourceImage};
use crate::par;
use crate::retrieval::{RetentionMask, ScoreMatrix};

/// Mask with empty rows and columns removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedMask {
    /// Original row of each compressed row, strictly increasing.
    pub kept_rows: Vec<usize>,
    /// Original column of each compressed column, strictly increasing.
    pub kept_cols: Vec<usize>,
    pub bits: BitMatrix,
}

impl CompressedMask {
    pub fn n_rows(&self) -> usize {
        self.kept_rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.kept_cols.len()
    }

    /// Maps a compressed coordinate back to the original lattice.
    pub fn source_of(&self, cell: Cell) -> Cell {
        Cell::new(self.kept_rows[cell.row], self.kept_cols[cell.col])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappedCell {
    pub canvas: Cell,
    pub source: Cell,
}

/// Canvas-cell to source-cell correspondence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutMapping {
    pub entries: Vec<MappedCell>,
}

impl LayoutMapping {
    pub fn source_of(&self, canvas: Cell) -> Option<Cell> {
        self.entries
            .iter()
            .find(|e| e.canvas == canvas)
            .map(|e| e.source)
    }
}

/// A crop copied onto the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub canvas: Cell,
    pub source: Cell,
    /// Pixel rectangle of the crop in the source image.
    pub source_rect: PixelRect,
}

/// A composed image plus where each of its cells came from.
#[derive(Debug, Clone)]
pub struct Canvas {
    pub image: SourceImage,
    pub cell_size: u32,
    pub mapping: LayoutMapping,
    /// Which canvas cells hold a crop; the rest are black.
    pub filled: BitMatrix,
    /// One entry per filled cell, row-major over the canvas.
    pub placements: Vec<Placement>,
}

impl Canvas {
    pub fn area(&self) -> u64 {
        self.image.area()
    }

    pub fn n_rows(&self) -> usize {
        self.filled.rows()
    }

    pub fn n_cols(&self) -> usize {
        self.filled.cols()
    }

    pub fn source_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.placements.iter().map(|p| p.source)
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        self.image.to_png()
    }
}

pub fn compress_mask(mask: &RetentionMask) -> Result<CompressedMask> {
    if mask.is_empty() {
        return Err(Error::InvalidInput("retention mask has no set cell".into()));
    }
    let kept_rows: Vec<usize> = (0..mask.rows()).filter(|&r| mask.row_any(r)).collect();
    let kept_cols: Vec<usize> = (0..mask.cols()).filter(|&c| mask.col_any(c)).collect();
    let mut bits = BitMatrix::zeros(kept_rows.len(), kept_cols.len());
    for (ci, &r) in kept_rows.iter().enumerate() {
        for (cj, &c) in kept_cols.iter().enumerate() {
            bits.set(ci, cj, mask.get(r, c));
        }
    }
    Ok(CompressedMask {
        kept_rows,
        kept_cols,
        bits,
    })
}

fn check_dims(grid: &CropGrid, mask: &RetentionMask) -> Result<()> {
    if mask.rows() != grid.rows() || mask.cols() != grid.cols() {
        return Err(Error::InvalidInput(format!(
            "mask is {}x{} but grid is {}x{}",
            mask.rows(),
            mask.cols(),
            grid.rows(),
            grid.cols()
        )));
    }
    Ok(())
}

/// Paints `slots` (canvas cell, source cell) onto a black canvas. Ragged
/// crops sit in the top-left corner of their slot.
fn compose(
    grid: &CropGrid,
    n_rows: usize,
    n_cols: usize,
    slots: &[MappedCell],
    mapping: LayoutMapping,
) -> Result<Canvas> {
    let cs = grid.cell_size();
    let mut image = SourceImage::filled(n_cols as u32 * cs, n_rows as u32 * cs, [0, 0, 0])?;
    let crops = par::map(slots, 0, |s| grid.crop_at(s.source.row, s.source.col));
    let mut filled = BitMatrix::zeros(n_rows, n_cols);
    let mut placements = Vec::with_capacity(slots.len());
    for (slot, crop) in slots.iter().zip(crops) {
        let crop = crop?;
        let (x, y) = (slot.canvas.col as u32 * cs, slot.canvas.row as u32 * cs);
        image.blit(x, y, crop.rect.w, crop.rect.h, &crop.pixels);
        filled.set(slot.canvas.row, slot.canvas.col, true);
        placements.push(Placement {
            canvas: slot.canvas,
            source: slot.source,
            source_rect: crop.rect,
        });
    }
    placements.sort_by_key(|p| p.canvas);
    Ok(Canvas {
        image,
        cell_size: cs,
        mapping,
        filled,
        placements,
    })
}

/// Composes the retained crops preserving their relative row and column order.
pub fn spatial_layout(grid: &CropGrid, mask: &RetentionMask) -> Result<Canvas> {
    check_dims(grid, mask)?;
    let cm = compress_mask(mask)?;
    let mut entries = Vec::with_capacity(cm.n_rows() * cm.n_cols());
    let mut slots = Vec::new();
    for ci in 0..cm.n_rows() {
        for cj in 0..cm.n_cols() {
            let canvas = Cell::new(ci, cj);
            let entry = MappedCell {
                canvas,
                source: cm.source_of(canvas),
            };
            entries.push(entry);
            if cm.bits.get(ci, cj) {
                slots.push(entry);
            }
        }
    }
    compose(
        grid,
        cm.n_rows(),
        cm.n_cols(),
        &slots,
        LayoutMapping { entries },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StripOrder {
    /// Ascending retrieval score, ties row-major.
    ScoreAscending,
    /// Row-major order of the original image.
    Appearance,
}

fn ceil_sqrt(k: usize) -> usize {
    let mut c = 0;
    while c * c < k {
        c += 1;
    }
    c
}

/// Concatenates retained crops left to right into a near-square block with
/// `ceil(sqrt(k))` columns. Position information is discarded.
pub fn strip_layout_by_score(
    grid: &CropGrid,
    mask: &RetentionMask,
    scores: &ScoreMatrix,
    order: StripOrder,
) -> Result<Canvas> {
    check_dims(grid, mask)?;
    if scores.rows() != grid.rows() || scores.cols() != grid.cols() {
        return Err(Error::InvalidInput(
            "score matrix does not match grid".into(),
        ));
    }
    let mut cells: Vec<Cell> = mask.ones_iter().collect();
    if cells.is_empty() {
        return Err(Error::InvalidInput("retention mask has no set cell".into()));
    }
    if order == StripOrder::ScoreAscending {
        cells.sort_by(|a, b| {
            scores
                .get(a.row, a.col)
                .total_cmp(&scores.get(b.row, b.col))
                .then(a.cmp(b))
        });
    }
    let k = cells.len();
    let n_cols = ceil_sqrt(k);
    let n_rows = k.div_ceil(n_cols);
    let entries: Vec<MappedCell> = cells
        .into_iter()
        .enumerate()
        .map(|(i, source)| MappedCell {
            canvas: Cell::new(i / n_cols, i % n_cols),
            source,
        })
        .collect();
    let mapping = LayoutMapping {
        entries: entries.clone(),
    };
    compose(grid, n_rows, n_cols, &entries, mapping)
}
