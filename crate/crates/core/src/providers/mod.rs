//! Embedding and confidence backends.
//!
//! Two interchangeable implementations sit behind the same traits: an
//! HTTP+JSON client for real model servers and a deterministic oracle that
//! derives embeddings and confidences from synthetic instance geometry.

pub mod http;
pub mod instance;
pub mod oracle;
pub mod wire;

use serde::{Deserialize, Serialize};

use crate::error::ProviderError;
use crate::grid::Crop;
use crate::layout::Canvas;
use crate::retrieval::Embedding;

pub use http::{HttpProvider, ProviderConfig, RecordingTransport, ReplayTransport, Transport};
pub use instance::{QuestionKind, SyntheticInstance, Target};
pub use oracle::OracleProvider;

/// Sentinel answer when the oracle cannot answer from a canvas.
pub const UNANSWERABLE: &str = "unanswerable";

pub trait EmbeddingProvider: Send + Sync {
    fn embed_query(&self, text: &str) -> Result<Embedding, ProviderError>;
    fn embed_image(&self, crop: &Crop) -> Result<Embedding, ProviderError>;
}

pub trait ConfidenceProvider: Send + Sync {
    /// Probability that the model answers "Yes" when asked whether the
    /// canvas suffices to answer `query`.
    fn yes_probability(
        &self,
        canvas: &Canvas,
        query: &str,
    ) -> Result<YesProbability, ProviderError>;
    fn answer(&self, canvas: &Canvas, query: &str) -> Result<String, ProviderError>;
}

/// A probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct YesProbability(f64);

impl YesProbability {
    pub fn new(value: f64) -> Result<Self, ProviderError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(ProviderError::Protocol(format!(
                "yes probability {value} outside [0, 1]"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for YesProbability {
    type Error = ProviderError;

    fn try_from(v: f64) -> Result<Self, ProviderError> {
        Self::new(v)
    }
}

impl From<YesProbability> for f64 {
    fn from(p: YesProbability) -> f64 {
        p.0
    }
}

/// The answerability prompt sent alongside a canvas.
pub fn confidence_prompt(query: &str) -> String {
    format!(
        "Question: {query}. Could you answer the question based on the available visual information? Answer Yes or No."
    )
}
