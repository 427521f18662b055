//! Helpers shared by the integration test binaries.
#![allow(dead_code)]

use base64::Engine as _;
use patchrag::grid::SourceImage;
use patchrag::providers::instance::{QuestionKind, SyntheticInstance, Target, PALETTE};
use patchrag::providers::wire::{
    AnswerRequest, AnswerResponse, ConfidenceRequest, ConfidenceResponse, EmbedKind, EmbedRequest,
    EmbedResponse,
};
use patchrag::providers::{Transport, UNANSWERABLE};
use patchrag::ProviderError;

pub const BACKGROUND: [u8; 3] = [96, 96, 96];

/// A stand-in model server that only looks at pixels: crops and canvases
/// are judged by how much non-background colour they contain.
pub struct PixelModel;

fn decode(b64: &str) -> Result<SourceImage, ProviderError> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(b64)
        .map_err(|e| ProviderError::Protocol(e.to_string()))?;
    SourceImage::decode(&bytes).map_err(|e| ProviderError::Protocol(e.to_string()))
}

fn coloured(px: &[u8]) -> bool {
    px != BACKGROUND && px != [0, 0, 0]
}

fn coloured_fraction(img: &SourceImage) -> f64 {
    let n = img.pixels().chunks_exact(3).filter(|p| coloured(p)).count();
    n as f64 / img.area() as f64
}

fn dominant_colour(img: &SourceImage) -> Option<&'static str> {
    let mut counts = [0usize; PALETTE.len()];
    for px in img.pixels().chunks_exact(3) {
        if let Some(i) = PALETTE.iter().position(|(_, rgb)| rgb == px) {
            counts[i] += 1;
        }
    }
    let (i, &n) = counts
        .iter()
        .enumerate()
        .max_by_key(|&(i, n)| (*n, usize::MAX - i))?;
    (n > 0).then(|| PALETTE[i].0)
}

fn proto<E: std::fmt::Display>(e: E) -> ProviderError {
    ProviderError::Protocol(e.to_string())
}

impl Transport for PixelModel {
    fn post(&self, endpoint: &str, body: &str) -> Result<String, ProviderError> {
        let reply = match endpoint {
            "/embed" => {
                let req: EmbedRequest = serde_json::from_str(body).map_err(proto)?;
                let embedding = match req.kind {
                    EmbedKind::Text => vec![1.0, 0.0],
                    EmbedKind::Image => {
                        let f = coloured_fraction(&decode(&req.payload)?);
                        vec![f + 0.01, 1.0 - f + 0.01]
                    }
                };
                serde_json::to_string(&EmbedResponse { embedding })
            }
            "/confidence" => {
                let req: ConfidenceRequest = serde_json::from_str(body).map_err(proto)?;
                let f = coloured_fraction(&decode(&req.image)?);
                serde_json::to_string(&ConfidenceResponse {
                    yes_probability: (2.5 * f).min(1.0),
                })
            }
            "/answer" => {
                let req: AnswerRequest = serde_json::from_str(body).map_err(proto)?;
                let img = decode(&req.image)?;
                let text = if (2.5 * coloured_fraction(&img)).min(1.0) > 0.6 {
                    dominant_colour(&img).unwrap_or(UNANSWERABLE)
                } else {
                    UNANSWERABLE
                };
                serde_json::to_string(&AnswerResponse { text: text.into() })
            }
            other => {
                return Err(ProviderError::Status {
                    status: 404,
                    body: other.into(),
                })
            }
        };
        reply.map_err(proto)
    }
}

/// Small single-target scene used by the recorded session fixture.
pub fn session_instance() -> SyntheticInstance {
    SyntheticInstance {
        id: "session".into(),
        grid_rows: 4,
        grid_cols: 4,
        cell_size: 16,
        targets: vec![Target {
            id: 3,
            cells: vec![[1, 2]],
            attribute: "red".into(),
        }],
        question: "What is the colour of object #3?".into(),
        question_kind: QuestionKind::SingleInstance,
        answer_key: "red".into(),
        seed: 1,
    }
}

pub fn fixture_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}
