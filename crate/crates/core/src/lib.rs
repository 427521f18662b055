//! Retrieval-augmented perception for very large images.
//!
//! An image is cut into a lattice of square crops, each crop is scored
//! against the question, the best crops are packed onto a compact canvas
//! that keeps their relative positions, and a confidence-guided best-first
//! search picks how many crops to keep.
//!
//! ```
//! use patchrag::grid::{partition, SourceImage};
//!
//! let img = SourceImage::filled(900, 450, [0, 0, 0]).unwrap();
//! let grid = partition(img, 448).unwrap();
//! assert_eq!((grid.rows(), grid.cols()), (2, 3));
//! ```

pub mod error;
pub mod grid;
pub mod harness;
pub mod layout;
pub mod par;
pub mod providers;
pub mod retrieval;
pub mod search;

pub use error::{Error, ProviderError, Result};
pub use grid::{partition, Cell, CropGrid, SourceImage};
pub use layout::{spatial_layout, strip_layout_by_score, Canvas, StripOrder};
pub use retrieval::{score_crops, similarity, top_k, Embedding, ScoreMatrix};
pub use search::{re_search, SearchOutcome, SearchParams};
