//! HTTP+JSON backend, plus record/replay transports for offline sessions.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::wire::{self, EmbedKind};
use super::{confidence_prompt, ConfidenceProvider, EmbeddingProvider, YesProbability};
use crate::error::{Error, ProviderError, Result};
use crate::grid::Crop;
use crate::layout::Canvas;
use crate::retrieval::Embedding;

const BACKOFF_START: Duration = Duration::from_millis(200);
pub const MAX_RETRIES_LIMIT: u32 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub base_url: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// Environment variable holding the bearer token, if any.
    pub auth_token_env: String,
    pub max_in_flight: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080".into(),
            timeout_ms: 30_000,
            max_retries: 3,
            auth_token_env: "PATCHRAG_API_TOKEN".into(),
            max_in_flight: 8,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timeout_ms == 0 {
            return Err(Error::InvalidConfig("timeout must be positive".into()));
        }
        if self.max_retries > MAX_RETRIES_LIMIT {
            return Err(Error::InvalidConfig(format!(
                "max_retries {} exceeds {MAX_RETRIES_LIMIT}",
                self.max_retries
            )));
        }
        if self.max_in_flight == 0 {
            return Err(Error::InvalidConfig("max_in_flight must be >= 1".into()));
        }
        Ok(())
    }
}

/// Moves one JSON body to an endpoint and returns the JSON reply.
pub trait Transport: Send + Sync {
    fn post(&self, endpoint: &str, body: &str) -> Result<String, ProviderError>;
}

/// Blocking reqwest transport with exponential backoff.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
    base_url: String,
    token: Option<String>,
    max_retries: u32,
    backoff: Duration,
}

impl ReqwestTransport {
    pub fn new(config: &ProviderConfig) -> Result<Self> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("http client: {e}")))?;
        let token = std::env::var(&config.auth_token_env)
            .ok()
            .filter(|t| !t.is_empty());
        Ok(Self {
            client,
            base_url: config.base_url.trim_end_matches('/').to_owned(),
            token,
            max_retries: config.max_retries,
            backoff: BACKOFF_START,
        })
    }

    /// Overrides the first backoff delay (tests use a few milliseconds).
    pub fn with_backoff(mut self, start: Duration) -> Self {
        self.backoff = start;
        self
    }

    fn attempt(&self, url: &str, body: &str) -> Result<String, (bool, ProviderError)> {
        let mut req = self
            .client
            .post(url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_owned());
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| {
            (
                true,
                ProviderError::Transport {
                    attempts: 1,
                    message: e.to_string(),
                },
            )
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            (
                true,
                ProviderError::Transport {
                    attempts: 1,
                    message: e.to_string(),
                },
            )
        })?;
        if status.is_success() {
            return Ok(text);
        }
        let retryable =
            status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408;
        Err((
            retryable,
            ProviderError::Status {
                status: status.as_u16(),
                body: text,
            },
        ))
    }
}

impl Transport for ReqwestTransport {
    fn post(&self, endpoint: &str, body: &str) -> Result<String, ProviderError> {
        let url = format!("{}{}", self.base_url, endpoint);
        let mut delay = self.backoff;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&url, body) {
                Ok(text) => return Ok(text),
                Err((retryable, err)) => {
                    if !retryable || attempts > self.max_retries {
                        return Err(match err {
                            ProviderError::Transport { message, .. } => {
                                ProviderError::Transport { attempts, message }
                            }
                            other => other,
                        });
                    }
                    log::debug!(
                        "{endpoint} attempt {attempts} failed: {err}; retrying in {delay:?}"
                    );
                    std::thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
    }
}

/// One recorded request/response pair. Bodies are kept verbatim.
#[derive(Debug, Serialize, Deserialize)]
pub struct Exchange {
    pub endpoint: String,
    pub request: Box<RawValue>,
    pub response: Box<RawValue>,
}

/// Wraps a transport and remembers every successful exchange.
pub struct RecordingTransport<T> {
    inner: T,
    log: Mutex<Vec<Exchange>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Writes the session as JSON lines, sorted by endpoint then request
    /// so concurrent recording still yields stable files.
    pub fn write_session(&self, mut out: impl Write) -> Result<()> {
        let mut log = self.log.lock().unwrap();
        log.sort_by(|a, b| (&a.endpoint, a.request.get()).cmp(&(&b.endpoint, b.request.get())));
        log.dedup_by(|a, b| a.endpoint == b.endpoint && a.request.get() == b.request.get());
        for ex in log.iter() {
            serde_json::to_writer(&mut out, ex)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn post(&self, endpoint: &str, body: &str) -> Result<String, ProviderError> {
        let resp = self.inner.post(endpoint, body)?;
        let raw = |s: &str| {
            RawValue::from_string(s.to_owned()).map_err(|e| ProviderError::Protocol(e.to_string()))
        };
        self.log.lock().unwrap().push(Exchange {
            endpoint: endpoint.to_owned(),
            request: raw(body)?,
            response: raw(&resp)?,
        });
        Ok(resp)
    }
}

/// Serves responses from a recorded session; never touches the network.
#[derive(Debug, Default)]
pub struct ReplayTransport {
    exchanges: HashMap<(String, String), String>,
}

impl ReplayTransport {
    pub fn from_reader(input: impl BufRead) -> Result<Self> {
        let mut exchanges = HashMap::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: Exchange = serde_json::from_str(&line)?;
            exchanges.insert(
                (ex.endpoint, ex.request.get().to_owned()),
                ex.response.get().to_owned(),
            );
        }
        Ok(Self { exchanges })
    }

    pub fn len(&self) -> usize {
        self.exchanges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exchanges.is_empty()
    }
}

impl Transport for ReplayTransport {
    fn post(&self, endpoint: &str, body: &str) -> Result<String, ProviderError> {
        self.exchanges
            .get(&(endpoint.to_owned(), body.to_owned()))
            .cloned()
            .ok_or_else(|| ProviderError::NotRecorded {
                endpoint: endpoint.to_owned(),
            })
    }
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn run<R>(&self, f: impl FnOnce() -> R) -> R {
        {
            let mut free = self.free.lock().unwrap();
            while *free == 0 {
                free = self.cv.wait(free).unwrap();
            }
            *free -= 1;
        }
        let out = f();
        *self.free.lock().unwrap() += 1;
        self.cv.notify_one();
        out
    }
}

/// Model-server client speaking the [`wire`] protocol.
pub struct HttpProvider<T = ReqwestTransport> {
    transport: T,
    gate: Gate,
}

impl HttpProvider<ReqwestTransport> {
    pub fn connect(config: &ProviderConfig) -> Result<Self> {
        Ok(Self::with_transport(
            ReqwestTransport::new(config)?,
            config.max_in_flight,
        ))
    }
}

impl<T: Transport> HttpProvider<T> {
    pub fn with_transport(transport: T, max_in_flight: usize) -> Self {
        Self {
            transport,
            gate: Gate {
                free: Mutex::new(max_in_flight.max(1)),
                cv: Condvar::new(),
            },
        }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn call<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        endpoint: &str,
        req: &Req,
    ) -> Result<Resp, ProviderError> {
        let body =
            serde_json::to_string(req).map_err(|e| ProviderError::Protocol(e.to_string()))?;
        let text = self.gate.run(|| self.transport.post(endpoint, &body))?;
        serde_json::from_str(&text).map_err(|e| ProviderError::Protocol(format!("{endpoint}: {e}")))
    }

    fn embed(&self, kind: EmbedKind, payload: String) -> Result<Embedding, ProviderError> {
        let resp: wire::EmbedResponse =
            self.call(wire::EMBED, &wire::EmbedRequest { kind, payload })?;
        Embedding::new(resp.embedding).map_err(|e| ProviderError::Protocol(e.to_string()))
    }
}

fn png_base64(png: Result<Vec<u8>>) -> Result<String, ProviderError> {
    let png = png.map_err(|e| ProviderError::InvalidInput(e.to_string()))?;
    Ok(base64::engine::general_purpose::STANDARD.encode(png))
}

impl<T: Transport> EmbeddingProvider for HttpProvider<T> {
    fn embed_query(&self, text: &str) -> Result<Embedding, ProviderError> {
        if text.is_empty() {
            return Err(ProviderError::InvalidInput("empty query".into()));
        }
        self.embed(EmbedKind::Text, text.to_owned())
    }

    fn embed_image(&self, crop: &Crop) -> Result<Embedding, ProviderError> {
        let image = crop
            .to_image()
            .map_err(|e| ProviderError::InvalidInput(e.to_string()))?;
        self.embed(EmbedKind::Image, png_base64(image.to_png())?)
    }
}

impl<T: Transport> ConfidenceProvider for HttpProvider<T> {
    fn yes_probability(
        &self,
        canvas: &Canvas,
        query: &str,
    ) -> Result<YesProbability, ProviderError> {
        if query.is_empty() {
            return Err(ProviderError::InvalidInput("empty query".into()));
        }
        let req = wire::ConfidenceRequest {
            image: png_base64(canvas.to_png())?,
            prompt: confidence_prompt(query),
        };
        let resp: wire::ConfidenceResponse = self.call(wire::CONFIDENCE, &req)?;
        YesProbability::new(resp.yes_probability)
    }

    fn answer(&self, canvas: &Canvas, query: &str) -> Result<String, ProviderError> {
        if query.is_empty() {
            return Err(ProviderError::InvalidInput("empty query".into()));
        }
        let req = wire::AnswerRequest {
            image: png_base64(canvas.to_png())?,
            question: query.to_owned(),
        };
        let resp: wire::AnswerResponse = self.call(wire::ANSWER, &req)?;
        Ok(resp.text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Minimal HTTP/1.1 server answering each connection from `replies`
    /// in order. Returns the base URL and the observed request heads.
    fn serve(replies: Vec<(u16, &'static str)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let seen2 = seen.clone();
        std::thread::spawn(move || {
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    head.push_str(&line);
                }
                let mut body_in = vec![0; len];
                reader.read_exact(&mut body_in).unwrap();
                head.push_str(&String::from_utf8(body_in).unwrap());
                seen2.lock().unwrap().push(head);
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (url, seen)
    }

    fn config(url: String, retries: u32) -> ProviderConfig {
        ProviderConfig {
            base_url: url,
            timeout_ms: 5_000,
            max_retries: retries,
            auth_token_env: "PATCHRAG_TEST_TOKEN_UNSET".into(),
            max_in_flight: 2,
        }
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (url, seen) = serve(vec![
            (503, "{}"),
            (500, "{}"),
            (200, r#"{"embedding":[0.0,1.0]}"#),
        ]);
        let transport = ReqwestTransport::new(&config(url, 3))
            .unwrap()
            .with_backoff(Duration::from_millis(2));
        let provider = HttpProvider::with_transport(transport, 2);
        let e = provider.embed_query("dog").unwrap();
        assert_eq!(e.values(), &[0.0, 1.0]);
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 3);
        assert!(seen[0].starts_with("POST /embed"));
        assert!(seen[0].ends_with(r#"{"kind":"text","payload":"dog"}"#));
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, seen) = serve(vec![(400, r#"{"error":"bad"}"#)]);
        let transport = ReqwestTransport::new(&config(url, 3)).unwrap();
        let provider = HttpProvider::with_transport(transport, 1);
        let err = provider.embed_query("dog").unwrap_err();
        assert!(matches!(err, ProviderError::Status { status: 400, .. }));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn gives_up_after_max_retries() {
        let (url, seen) = serve(vec![(503, "{}"), (503, "{}")]);
        let transport = ReqwestTransport::new(&config(url, 1))
            .unwrap()
            .with_backoff(Duration::from_millis(1));
        let err = transport.post("/answer", "{}").unwrap_err();
        assert!(matches!(err, ProviderError::Status { status: 503, .. }));
        assert_eq!(seen.lock().unwrap().len(), 2);
    }

    #[test]
    fn sends_bearer_token() {
        let (url, seen) = serve(vec![(200, r#"{"text":"ok"}"#)]);
        std::env::set_var("PATCHRAG_TEST_TOKEN_SET", "s3cret");
        let mut cfg = config(url, 0);
        cfg.auth_token_env = "PATCHRAG_TEST_TOKEN_SET".into();
        let transport = ReqwestTransport::new(&cfg).unwrap();
        transport.post("/answer", "{}").unwrap();
        let head = seen.lock().unwrap()[0].to_ascii_lowercase();
        assert!(head.contains("authorization: bearer s3cret"));
    }

    #[test]
    fn connection_refused_is_transport_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        drop(listener);
        let transport = ReqwestTransport::new(&config(url, 1))
            .unwrap()
            .with_backoff(Duration::from_millis(1));
        let err = transport.post("/embed", "{}").unwrap_err();
        assert!(matches!(err, ProviderError::Transport { attempts: 2, .. }));
    }

    #[test]
    fn malformed_response_is_protocol_error() {
        struct Fixed(&'static str);
        impl Transport for Fixed {
            fn post(&self, _: &str, _: &str) -> Result<String, ProviderError> {
                Ok(self.0.to_owned())
            }
        }
        let p = HttpProvider::with_transport(Fixed(r#"{"vector":[1]}"#), 1);
        assert!(matches!(
            p.embed_query("x"),
            Err(ProviderError::Protocol(_))
        ));
        let p = HttpProvider::with_transport(Fixed(r#"{"embedding":[0.0]}"#), 1);
        assert!(matches!(
            p.embed_query("x"),
            Err(ProviderError::Protocol(_))
        ));
        assert!(matches!(
            p.embed_query(""),
            Err(ProviderError::InvalidInput(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(ProviderConfig::default().validate().is_ok());
        let mut c = ProviderConfig::default();
        c.max_retries = 6;
        assert!(c.validate().is_err());
        c.max_retries = 5;
        c.timeout_ms = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn record_then_replay() {
        struct Echo(AtomicUsize);
        impl Transport for Echo {
            fn post(&self, _: &str, body: &str) -> Result<String, ProviderError> {
                self.0.fetch_add(1, Ordering::SeqCst);
                Ok(format!(
                    r#"{{"text":{}}}"#,
                    serde_json::to_string(body).unwrap()
                ))
            }
        }
        let rec = RecordingTransport::new(Echo(AtomicUsize::new(0)));
        let a = rec
            .post("/answer", r#"{"image":"x","question":"q"}"#)
            .unwrap();
        let mut session = Vec::new();
        rec.write_session(&mut session).unwrap();
        let replay = ReplayTransport::from_reader(session.as_slice()).unwrap();
        assert_eq!(replay.len(), 1);
        assert_eq!(
            replay
                .post("/answer", r#"{"image":"x","question":"q"}"#)
                .unwrap(),
            a
        );
        assert!(matches!(
            replay.post("/answer", r#"{"image":"y","question":"q"}"#),
            Err(ProviderError::NotRecorded { .. })
        ));
    }
}
