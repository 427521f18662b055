//! Partitioning of a source image into a lattice of crops.
//!
//! Grid indexing is row-major, 0-based, with the origin at the top-left
//! corner. Interior cells are exactly `cell_size` square; cells on the right
//! and bottom edges keep their ragged size and are never padded here.

use std::io::{Cursor, Read, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Smallest accepted crop edge in pixels.
pub const MIN_CELL_SIZE: u32 = 16;
/// Default crop edge, matching a typical retriever encoder input.
pub const DEFAULT_CELL_SIZE: u32 = 448;

/// An 8-bit RGB image stored row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct SourceImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for SourceImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SourceImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl SourceImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "degenerate image {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::InvalidInput(format!(
                "pixel buffer holds {} bytes, expected {expected} for {width}x{height} RGB",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// A solid image filled with `rgb`.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&rgb);
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Fills `rect` (clipped to the image) with a solid colour.
    pub fn fill_rect(&mut self, rect: PixelRect, rgb: [u8; 3]) {
        let Some(rect) = rect.intersect(&PixelRect::new(0, 0, self.width, self.height)) else {
            return;
        };
        for y in rect.y..rect.y + rect.h {
            let row = (y as usize * self.width as usize + rect.x as usize) * 3;
            for px in self.pixels[row..row + rect.w as usize * 3].chunks_exact_mut(3) {
                px.copy_from_slice(&rgb);
            }
        }
    }

    /// Copies the pixels inside `rect` into a new buffer.
    pub fn copy_rect(&self, rect: PixelRect) -> Vec<u8> {
        let mut out = Vec::with_capacity(rect.area() as usize * 3);
        let stride = self.width as usize * 3;
        for y in rect.y..rect.y + rect.h {
            let start = y as usize * stride + rect.x as usize * 3;
            out.extend_from_slice(&self.pixels[start..start + rect.w as usize * 3]);
        }
        out
    }

    /// Writes a `w x h` RGB block at `(x, y)`. The block must fit.
    pub(crate) fn blit(&mut self, x: u32, y: u32, w: u32, h: u32, block: &[u8]) {
        debug_assert_eq!(block.len(), w as usize * h as usize * 3);
        let stride = self.width as usize * 3;
        let row_len = w as usize * 3;
        for (dy, src) in block.chunks_exact(row_len).enumerate() {
            let start = (y as usize + dy) * stride + x as usize * 3;
            self.pixels[start..start + row_len].copy_from_slice(src);
        }
    }

    /// SHA-256 over dimensions and pixel bytes.
    pub fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.width.to_le_bytes());
        hasher.update(self.height.to_le_bytes());
        hasher.update(&self.pixels);
        hasher.finalize().into()
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        image::write_buffer_with_format(
            &mut Cursor::new(&mut buf),
            &self.pixels,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )?;
        Ok(buf)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_png()?)?;
        Ok(())
    }

    /// Decodes PNG or JPEG bytes into RGB.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw())
    }

    /// Raw fixture format: width and height as little-endian `u32`, then RGB bytes.
    pub fn read_raw(mut reader: impl Read) -> Result<Self> {
        let mut header = [0u8; 8];
        reader.read_exact(&mut header)?;
        let width = u32::from_le_bytes(header[0..4].try_into().unwrap());
        let height = u32::from_le_bytes(header[4..8].try_into().unwrap());
        let mut pixels = Vec::new();
        reader.read_to_end(&mut pixels)?;
        Self::new(width, height, pixels)
    }

    pub fn write_raw(&self, mut writer: impl Write) -> Result<()> {
        writer.write_all(&self.width.to_le_bytes())?;
        writer.write_all(&self.height.to_le_bytes())?;
        writer.write_all(&self.pixels)?;
        Ok(())
    }

    /// Loads an image file. `.raw` / `.rgb` use the raw fixture format,
    /// anything else goes through the PNG/JPEG decoders.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("raw") | Some("rgb") => Self::read_raw(bytes.as_slice()),
            _ => Self::decode(&bytes),
        }
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelRect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.w && y < self.y + self.h
    }

    pub fn intersect(&self, other: &PixelRect) -> Option<PixelRect> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        (x1 > x0 && y1 > y0).then(|| PixelRect::new(x0, y0, x1 - x0, y1 - y0))
    }

    pub fn overlap_area(&self, other: &PixelRect) -> u64 {
        self.intersect(other).map_or(0, |r| r.area())
    }
}

/// Row-major lattice coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// Dense boolean matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidInput("ragged bit matrix rows".into()));
        }
        let bits = rows
            .iter()
            .flat_map(|row| row.iter().map(|&b| b != 0))
            .collect();
        Ok(Self {
            rows: r,
            cols: c,
            bits,
        })
    }

    pub fn from_cells(
        rows: usize,
        cols: usize,
        cells: impl IntoIterator<Item = Cell>,
    ) -> Result<Self> {
        let mut m = Self::zeros(rows, cols);
        for cell in cells {
            if cell.row >= rows || cell.col >= cols {
                return Err(Error::Index {
                    row: cell.row,
                    col: cell.col,
                    rows,
                    cols,
                });
            }
            m.set(cell.row, cell.col, true);
        }
        Ok(m)
    }

    /// Builds a matrix from the low `rows * cols` bits of `word`, bit `i` being
    /// row-major cell `i`.
    pub fn from_word(rows: usize, cols: usize, word: u64) -> Self {
        let bits = (0..rows * cols).map(|i| word >> i & 1 == 1).collect();
        Self { rows, cols, bits }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.cols + col] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Set cells in row-major order.
    pub fn ones_iter(&self) -> impl Iterator<Item = Cell> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| Cell::new(i / self.cols, i % self.cols))
    }

    pub fn row_any(&self, row: usize) -> bool {
        self.bits[row * self.cols..(row + 1) * self.cols]
            .iter()
            .any(|&b| b)
    }

    pub fn col_any(&self, col: usize) -> bool {
        (0..self.rows).any(|r| self.get(r, col))
    }
}

/// An image partitioned into an `rows x cols` lattice of crops.
#[derive(Debug, Clone)]
pub struct CropGrid {
    source: Arc<SourceImage>,
    cell_size: u32,
    rows: usize,
    cols: usize,
    rects: Vec<PixelRect>,
    digest: OnceLock<[u8; 32]>,
}

/// A pixel-exact copy of one grid cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Crop {
    pub cell: Cell,
    pub rect: PixelRect,
    pub pixels: Vec<u8>,
}

impl Crop {
    pub fn to_image(&self) -> Result<SourceImage> {
        SourceImage::new(self.rect.w, self.rect.h, self.pixels.clone())
    }
}

/// Splits `image` into a lattice of crops no larger than `cell_size` square.
pub fn partition(image: impl Into<Arc<SourceImage>>, cell_size: u32) -> Result<CropGrid> {
    let source = image.into();
    if cell_size < MIN_CELL_SIZE {
        return Err(Error::InvalidConfig(format!(
            "cell_size {cell_size} below minimum {MIN_CELL_SIZE}"
        )));
    }
    let (w, h) = (source.width(), source.height());
    if w == 0 || h == 0 {
        return Err(Error::InvalidInput(format!("degenerate image {w}x{h}")));
    }
    let rows = h.div_ceil(cell_size) as usize;
    let cols = w.div_ceil(cell_size) as usize;
    let mut rects = Vec::with_capacity(rows * cols);
    for r in 0..rows as u32 {
        for c in 0..cols as u32 {
            let x = c * cell_size;
            let y = r * cell_size;
            rects.push(PixelRect::new(
                x,
                y,
                cell_size.min(w - x),
                cell_size.min(h - y),
            ));
        }
    }
    Ok(CropGrid {
        source,
        cell_size,
        rows,
        cols,
        rects,
        digest: OnceLock::new(),
    })
}

impl CropGrid {
    pub fn source(&self) -> &SourceImage {
        &self.source
    }

    pub fn cell_size(&self) -> u32 {
        self.cell_size
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.len()).map(|i| Cell::new(i / self.cols, i % self.cols))
    }

    pub fn index_of(&self, cell: Cell) -> usize {
        cell.row * self.cols + cell.col
    }

    fn check(&self, row: usize, col: usize) -> Result<()> {
        if row >= self.rows || col >= self.cols {
            return Err(Error::Index {
                row,
                col,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(())
    }

    pub fn rect(&self, row: usize, col: usize) -> Result<PixelRect> {
        self.check(row, col)?;
        Ok(self.rects[row * self.cols + col])
    }

    pub fn rects(&self) -> &[PixelRect] {
        &self.rects
    }

    /// Copies the pixels of cell `(row, col)`.
    pub fn crop_at(&self, row: usize, col: usize) -> Result<Crop> {
        let rect = self.rect(row, col)?;
        Ok(Crop {
            cell: Cell::new(row, col),
            rect,
            pixels: self.source.copy_rect(rect),
        })
    }

    /// Digest of the source image, computed once.
    pub fn digest(&self) -> [u8; 32] {
        *self.digest.get_or_init(|| self.source.digest())
    }
}
