//! JSON bodies of the model server protocol.
//!
//! | endpoint      | request                              | response                  |
//! |---------------|--------------------------------------|---------------------------|
//! | `/embed`      | `{kind: "text"\|"image", payload}`   | `{embedding: [f64, ..]}`  |
//! | `/confidence` | `{image: base64 PNG, prompt}`        | `{yes_probability: f64}`  |
//! | `/answer`     | `{image: base64 PNG, question}`      | `{text}`                  |

use serde::{Deserialize, Serialize};

pub const EMBED: &str = "/embed";
pub const CONFIDENCE: &str = "/confidence";
pub const ANSWER: &str = "/answer";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedKind {
    Text,
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub kind: EmbedKind,
    /// UTF-8 text, or a base64-encoded PNG for images.
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRequest {
    pub image: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceResponse {
    pub yes_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub image: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResponse {
    pub text: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn round_trip<T: Serialize + for<'de> Deserialize<'de>>(text: &str) -> String {
        let v: T = serde_json::from_str(text).unwrap();
        serde_json::to_string(&v).unwrap()
    }

    #[test]
    fn canonical_bodies_survive_round_trip() {
        let cases: [(&str, fn(&str) -> String); 6] = [
            (
                r#"{"kind":"text","payload":"where is the dog?"}"#,
                round_trip::<EmbedRequest>,
            ),
            (
                r#"{"embedding":[0.1,-2.5e-7,3.0]}"#,
                round_trip::<EmbedResponse>,
            ),
            (
                r#"{"image":"iVBORw0KGgo=","prompt":"Question: q. Answer Yes or No."}"#,
                round_trip::<ConfidenceRequest>,
            ),
            (
                r#"{"yes_probability":0.6180339887498949}"#,
                round_trip::<ConfidenceResponse>,
            ),
            (
                r#"{"image":"AAAA","question":"what?"}"#,
                round_trip::<AnswerRequest>,
            ),
            (r#"{"text":"red é\n"}"#, round_trip::<AnswerResponse>),
        ];
        for (text, f) in cases {
            let once = f(text);
            assert_eq!(f(&once), once);
        }
        assert_eq!(
            round_trip::<EmbedResponse>(r#"{"embedding":[0.1,-2.5e-7,3.0]}"#),
            r#"{"embedding":[0.1,-2.5e-7,3.0]}"#
        );
    }

    proptest! {
        #[test]
        fn embeddings_are_lossless(v in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 1..64)) {
            let text = serde_json::to_string(&EmbedResponse { embedding: v.clone() }).unwrap();
            let back: EmbedResponse = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(&back.embedding, &v);
            prop_assert_eq!(serde_json::to_string(&back).unwrap(), text);
        }

        #[test]
        fn text_bodies_are_lossless(s in ".*") {
            let req = AnswerRequest { image: s.clone(), question: s };
            let text = serde_json::to_string(&req).unwrap();
            let back: AnswerRequest = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(serde_json::to_string(&back).unwrap(), text);
            prop_assert_eq!(back, req);
        }
    }
}
