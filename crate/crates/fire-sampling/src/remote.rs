//! Client for completions-style HTTP model servers.
//!
//! The server is asked for exactly one token per request with `temperature`
//! 1 and no server-side filtering; it must return top logprobs for that
//! position. All sampling happens client-side so the hot stage sees raw
//! scores. The returned logprob set is treated as the full effective
//! vocabulary for the step: known tokens the server did not return are
//! masked. This is an approximation — a server truncates to its top-W
//! logprobs, while an in-engine sampler would see full-vocabulary logits —
//! so the hot stage's effective top-k is `min(k, W)`.
//!
//! Wire format, request:
//!
//! ```json
//! {"prompt": "<context text>", "max_tokens": 1, "logprobs": 32, "temperature": 1.0}
//! ```
//!
//! and response (only the first position of the first choice is read):
//!
//! ```json
//! {"choices": [{"logprobs": {"top_logprobs": [{"tok": -0.12, "other": -2.5}]}}]}
//! ```

use crate::logits::LogitVector;
use crate::model::{ModelError, ModelSource, TokenId};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::sync::{Condvar, Mutex, RwLock};
use std::time::Duration;

pub const DEFAULT_LOGPROBS_WIDTH: usize = 32;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_MAX_RETRIES: u32 = 3;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
pub const DEFAULT_END_TOKEN_TEXT: &str = "<|endoftext|>";

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
    logprobs: usize,
    temperature: f64,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    logprobs: Option<LogProbs>,
}

#[derive(Debug, Deserialize)]
struct LogProbs {
    // BTreeMap so newly seen tokens are interned in a deterministic order.
    top_logprobs: Vec<BTreeMap<String, f64>>,
}

/// Token strings seen so far; ids are assigned in interning order and id 0
/// is the configured end-of-text marker.
struct TokenRegistry {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl TokenRegistry {
    fn new(end_text: &str) -> Self {
        let mut registry = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        registry.intern(end_text);
        registry
    }

    fn intern(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Gate {
    fn new(capacity: usize) -> Self {
        Self {
            permits: Mutex::new(capacity.max(1)),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.gate.permits.lock().unwrap() += 1;
        self.gate.available.notify_one();
    }
}

/// HTTP-backed model source. See the module docs for the wire protocol.
pub struct RemoteModel {
    url: String,
    auth_token: Option<String>,
    logprobs_width: usize,
    max_retries: u32,
    agent: ureq::Agent,
    gate: Gate,
    registry: RwLock<TokenRegistry>,
}

impl RemoteModel {
    pub fn builder(url: &str) -> RemoteModelBuilder {
        RemoteModelBuilder {
            url: url.to_string(),
            timeout: DEFAULT_TIMEOUT,
            auth_token: None,
            logprobs_width: DEFAULT_LOGPROBS_WIDTH,
            max_retries: DEFAULT_MAX_RETRIES,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            end_token_text: DEFAULT_END_TOKEN_TEXT.to_string(),
        }
    }

    fn request_once(&self, prompt: &str) -> Result<BTreeMap<String, f64>, ModelError> {
        let body = serde_json::to_string(&CompletionRequest {
            prompt,
            max_tokens: 1,
            logprobs: self.logprobs_width,
            temperature: 1.0,
        })
        .expect("request serializes");
        let _slot = self.gate.acquire();
        let mut request = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json");
        if let Some(token) = &self.auth_token {
            request = request.header("authorization", format!("Bearer {token}"));
        }
        let mut response = request.send(body.as_str()).map_err(|e| ModelError::Remote {
            attempts: 1,
            message: e.to_string(),
        })?;
        let status = response.status();
        if !status.is_success() {
            return Err(ModelError::Remote {
                attempts: 1,
                message: format!("server returned status {status}"),
            });
        }
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| ModelError::InvalidResponse(e.to_string()))?;
        let parsed: CompletionResponse = serde_json::from_str(&text)
            .map_err(|e| ModelError::InvalidResponse(format!("bad JSON: {e}")))?;
        let top = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.logprobs)
            .and_then(|lp| lp.top_logprobs.into_iter().next())
            .ok_or_else(|| {
                ModelError::InvalidResponse("missing choices[0].logprobs.top_logprobs[0]".into())
            })?;
        if top.is_empty() {
            return Err(ModelError::InvalidResponse("empty top_logprobs".into()));
        }
        if let Some((token, lp)) = top.iter().find(|(_, lp)| !lp.is_finite()) {
            return Err(ModelError::InvalidResponse(format!(
                "non-finite logprob {lp} for token {token:?}"
            )));
        }
        Ok(top)
    }

    fn request_with_retries(&self, prompt: &str) -> Result<BTreeMap<String, f64>, ModelError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.request_once(prompt) {
                Ok(top) => return Ok(top),
                Err(e) if e.is_retriable() && attempts <= self.max_retries => {
                    log::warn!("remote request attempt {attempts} failed: {e}; retrying");
                    std::thread::sleep(Duration::from_millis(50 * attempts as u64));
                }
                Err(ModelError::Remote { message, .. }) => {
                    return Err(ModelError::Remote { attempts, message });
                }
                Err(e) => return Err(e),
            }
        }
    }
}

pub struct RemoteModelBuilder {
    url: String,
    timeout: Duration,
    auth_token: Option<String>,
    logprobs_width: usize,
    max_retries: u32,
    max_in_flight: usize,
    end_token_text: String,
}

impl RemoteModelBuilder {
    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn auth_token(mut self, token: Option<String>) -> Self {
        self.auth_token = token;
        self
    }

    pub fn logprobs_width(mut self, width: usize) -> Self {
        self.logprobs_width = width;
        self
    }

    pub fn max_retries(mut self, retries: u32) -> Self {
        self.max_retries = retries;
        self
    }

    pub fn max_in_flight(mut self, limit: usize) -> Self {
        self.max_in_flight = limit;
        self
    }

    pub fn end_token_text(mut self, text: &str) -> Self {
        self.end_token_text = text.to_string();
        self
    }

    pub fn build(self) -> RemoteModel {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build();
        RemoteModel {
            url: self.url,
            auth_token: self.auth_token,
            logprobs_width: self.logprobs_width,
            max_retries: self.max_retries,
            agent: config.into(),
            gate: Gate::new(self.max_in_flight),
            registry: RwLock::new(TokenRegistry::new(&self.end_token_text)),
        }
    }
}

impl ModelSource for RemoteModel {
    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector, ModelError> {
        let prompt = self.render(context);
        let top = self.request_with_retries(&prompt)?;
        let mut registry = self.registry.write().unwrap();
        let scored: Vec<(TokenId, f64)> = top
            .iter()
            .map(|(token, &lp)| (registry.intern(token), lp))
            .collect();
        let width = registry.tokens.len();
        drop(registry);
        let mut scores = vec![0.0; width];
        let mut masked = vec![true; width];
        for (id, lp) in scored {
            scores[id] = lp;
            masked[id] = false;
        }
        Ok(LogitVector::with_mask(scores, masked)?)
    }

    fn render(&self, tokens: &[TokenId]) -> String {
        let registry = self.registry.read().unwrap();
        tokens
            .iter()
            .filter(|&&id| id != 0)
            .filter_map(|&id| registry.tokens.get(id).map(String::as_str))
            .collect()
    }

    /// The prompt string is interned whole as a single pseudo-token; server
    /// tokens carry their own spacing.
    fn prompt_tokens(&self, text: &str) -> Result<Vec<TokenId>, ModelError> {
        let mut registry = self.registry.write().unwrap();
        Ok(vec![registry.intern(text)])
    }

    fn end_token(&self) -> TokenId {
        0
    }

    fn vocab_size(&self) -> usize {
        self.registry.read().unwrap().tokens.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// Single-shot HTTP responder; records the request body it saw.
    fn serve_once(response_json: &'static str) -> (String, std::sync::mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = vec![0u8; 65536];
            let mut read = 0;
            let body = loop {
                let n = stream.read(&mut buf[read..]).unwrap();
                read += n;
                let text = String::from_utf8_lossy(&buf[..read]).to_string();
                if let Some(split) = text.find("\r\n\r\n") {
                    let headers = &text[..split];
                    let length: usize = headers
                        .lines()
                        .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:")
                            .map(|v| v.trim().parse().unwrap()))
                        .unwrap_or(0);
                    let body_start = split + 4;
                    if read >= body_start + length {
                        break text[body_start..body_start + length].to_string();
                    }
                }
            };
            tx.send(body).unwrap();
            let reply = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                response_json.len(),
                response_json
            );
            stream.write_all(reply.as_bytes()).unwrap();
        });
        (format!("http://{addr}"), rx)
    }

    #[test]
    fn request_and_masking_round_trip() {
        let (url, rx) = serve_once(
            r#"{"choices":[{"logprobs":{"top_logprobs":[{"a":-0.5,"b":-1.5,"<|endoftext|>":-4.0}]}}]}"#,
        );
        let model = RemoteModel::builder(&url).max_retries(0).build();
        let prompt = model.prompt_tokens("Q: test\n").unwrap();
        let logits = model.next_logits(&prompt).unwrap();

        let body = rx.recv().unwrap();
        let sent: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(sent["prompt"], "Q: test\n");
        assert_eq!(sent["max_tokens"], 1);
        assert_eq!(sent["temperature"], 1.0);
        assert_eq!(sent["logprobs"], DEFAULT_LOGPROBS_WIDTH as i64);

        // Registry: 0 = end text, 1 = prompt, then returned tokens in
        // lexicographic order.
        assert_eq!(logits.len(), 4);
        assert!(!logits.is_masked(0));
        assert_eq!(logits.score(0), -4.0);
        assert!(logits.is_masked(1), "prompt pseudo-token is masked");
        let a = 2;
        let b = 3;
        assert_eq!(logits.score(a), -0.5);
        assert_eq!(logits.score(b), -1.5);
        assert_eq!(model.vocab_size(), 4);
        assert_eq!(model.render(&[a, b]), "ab");
    }

    #[test]
    fn connection_failure_reports_attempts() {
        // Bind then drop a listener so the port is very likely closed.
        let addr = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap()
        };
        let model = RemoteModel::builder(&format!("http://{addr}"))
            .max_retries(2)
            .timeout(Duration::from_millis(500))
            .build();
        let err = model.next_logits(&[0]).unwrap_err();
        match err {
            ModelError::Remote { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("expected Remote error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_response_is_not_retried() {
        let (url, _rx) = serve_once(r#"{"choices":[]}"#);
        let model = RemoteModel::builder(&url).max_retries(5).build();
        let err = model.next_logits(&[0]).unwrap_err();
        assert!(matches!(err, ModelError::InvalidResponse(_)), "{err:?}");
    }

    #[test]
    fn non_finite_logprob_rejected() {
        let (url, _rx) = serve_once(
            r#"{"choices":[{"logprobs":{"top_logprobs":[{"a":null}]}}]}"#,
        );
        let model = RemoteModel::builder(&url).max_retries(0).build();
        let err = model.next_logits(&[0]).unwrap_err();
        assert!(matches!(err, ModelError::InvalidResponse(_)), "{err:?}");
    }
}
