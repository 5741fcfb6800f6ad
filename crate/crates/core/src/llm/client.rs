use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cache::ResponseCache;
use super::rate::TokenBucket;
use super::LlmError;

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "FLAB_API_KEY";

/// One chat request. Temperature is always 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmRequest {
    pub system_message: String,
    pub human_message: String,
    pub max_new_tokens: u32,
    pub want_logprobs: bool,
    pub top_logprobs_k: u32,
}

impl LlmRequest {
    pub const TEMPERATURE: f64 = 0.0;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmResponse {
    pub text: String,
    /// First generated token's top alternatives, token -> log-probability.
    pub first_token_top_logprobs: Option<BTreeMap<String, f64>>,
    pub backend_id: String,
    pub raw_payload_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Base URL up to and including `/v1`.
    pub url: String,
    pub model: String,
    /// Identifier mixed into cache keys; defaults to the URL.
    pub endpoint_id: Option<String>,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
    /// Upper bound on concurrent in-flight requests.
    pub parallelism: usize,
    pub requests_per_minute: Option<f64>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            url: "http://127.0.0.1:8000/v1".into(),
            model: "vicuna-13b".into(),
            endpoint_id: None,
            api_key: None,
            timeout_secs: 120,
            max_retries: 4,
            backoff_base_ms: 500,
            backoff_cap_ms: 30_000,
            parallelism: 4,
            requests_per_minute: None,
        }
    }
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        EndpointConfig {
            url: url.into(),
            model: model.into(),
            ..Default::default()
        }
    }

    /// Fills `api_key` from `FLAB_API_KEY` when unset.
    pub fn with_env_key(mut self) -> Self {
        if self.api_key.is_none() {
            self.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        }
        self
    }

    pub fn endpoint_id(&self) -> &str {
        self.endpoint_id.as_deref().unwrap_or(&self.url)
    }

    fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.url.trim_end_matches('/'))
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(self.backoff_cap_ms))
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    logprobs: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_logprobs: Option<u32>,
}

#[derive(Deserialize)]
struct WireCompletion {
    #[serde(default)]
    model: Option<String>,
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    content: Option<Vec<WireTokenLogprob>>,
}

#[derive(Deserialize)]
struct WireTokenLogprob {
    #[serde(default)]
    token: Option<String>,
    #[serde(default)]
    logprob: Option<f64>,
    #[serde(default)]
    top_logprobs: Option<Vec<WireTopLogprob>>,
}

#[derive(Deserialize)]
struct WireTopLogprob {
    token: String,
    logprob: f64,
}

/// Serialized request body; also the cache key material.
pub(crate) fn request_body(request: &LlmRequest, model: &str) -> String {
    let wire = WireRequest {
        model,
        messages: vec![
            WireMessage {
                role: "system",
                content: &request.system_message,
            },
            WireMessage {
                role: "user",
                content: &request.human_message,
            },
        ],
        temperature: LlmRequest::TEMPERATURE,
        max_tokens: request.max_new_tokens.max(1),
        logprobs: request.want_logprobs.then_some(true),
        top_logprobs: request.want_logprobs.then_some(request.top_logprobs_k),
    };
    serde_json::to_string(&wire).expect("request serializes")
}

pub(crate) fn request_digest(endpoint_id: &str, model: &str, body: &str) -> String {
    let mut h = Sha256::new();
    h.update(endpoint_id.as_bytes());
    h.update(b"\n");
    h.update(model.as_bytes());
    h.update(b"\n");
    h.update(body.as_bytes());
    hex::encode(h.finalize())
}

/// Parses a chat-completions payload.
pub fn parse_response(raw: &str, backend_id: &str) -> Result<LlmResponse, LlmError> {
    let parsed: WireCompletion =
        serde_json::from_str(raw).map_err(|e| LlmError::Malformed(e.to_string()))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| LlmError::Malformed("no choices".into()))?;
    let first = choice
        .logprobs
        .and_then(|l| l.content)
        .and_then(|c| c.into_iter().next());
    let first_token_top_logprobs = match first {
        None => None,
        Some(tok) => {
            let mut map = BTreeMap::new();
            let alternatives = match tok.top_logprobs {
                Some(top) if !top.is_empty() => top.into_iter().map(|t| (t.token, t.logprob)).collect(),
                _ => match (tok.token, tok.logprob) {
                    (Some(t), Some(lp)) => vec![(t, lp)],
                    _ => return Err(LlmError::Malformed("first token has no log-probabilities".into())),
                },
            };
            for (token, lp) in alternatives {
                if !lp.is_finite() && lp != f64::NEG_INFINITY || lp > 1e-6 {
                    return Err(LlmError::Malformed(format!(
                        "log-probability {lp} for token {token:?}"
                    )));
                }
                let lp = lp.min(0.0);
                let slot = map.entry(token).or_insert(lp);
                if lp > *slot {
                    *slot = lp;
                }
            }
            Some(map)
        }
    };
    let mut h = Sha256::new();
    h.update(raw.as_bytes());
    Ok(LlmResponse {
        text: choice.message.content.unwrap_or_default(),
        first_token_top_logprobs,
        backend_id: match parsed.model {
            Some(m) => format!("{backend_id}/{m}"),
            None => backend_id.to_string(),
        },
        raw_payload_digest: hex::encode(h.finalize()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SendOutcome {
    pub response: LlmResponse,
    pub from_cache: bool,
}

/// Blocking chat client with retries, an optional disk cache and an
/// optional request-rate limit.
pub struct ChatClient {
    config: EndpointConfig,
    agent: ureq::Agent,
    cache: Option<ResponseCache>,
    limiter: Option<TokenBucket>,
    network_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl ChatClient {
    pub fn new(config: EndpointConfig, cache: Option<ResponseCache>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let limiter = config.requests_per_minute.map(TokenBucket::per_minute);
        ChatClient {
            config,
            agent,
            cache,
            limiter,
            network_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// HTTP attempts made so far, retries included.
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::SeqCst)
    }

    /// Cache key of a request under this client's endpoint and model.
    pub fn digest(&self, request: &LlmRequest) -> String {
        let body = request_body(request, &self.config.model);
        request_digest(self.config.endpoint_id(), &self.config.model, &body)
    }

    /// Sends a request, serving it from the cache when possible.
    pub fn send(&self, request: &LlmRequest) -> Result<SendOutcome, LlmError> {
        let body = request_body(request, &self.config.model);
        let digest = request_digest(self.config.endpoint_id(), &self.config.model, &body);
        let backend = self.config.endpoint_id().to_string();
        if let Some(cache) = &self.cache {
            if let Some(raw) = cache.get(&digest) {
                match parse_response(&raw, &backend) {
                    Ok(response) => {
                        self.cache_hits.fetch_add(1, Ordering::SeqCst);
                        return Ok(SendOutcome {
                            response,
                            from_cache: true,
                        });
                    }
                    Err(e) => warn!("ignoring unreadable cache record {digest}: {e}"),
                }
            }
        }
        let raw = self.post_with_retries(&body)?;
        let response = parse_response(&raw, &backend)?;
        if let Some(cache) = &self.cache {
            cache
                .put(&digest, &raw)
                .map_err(|e| LlmError::Cache(e.to_string()))?;
        }
        Ok(SendOutcome {
            response,
            from_cache: false,
        })
    }

    fn post_with_retries(&self, body: &str) -> Result<String, LlmError> {
        let url = self.config.completions_url();
        let attempts = self.config.max_retries + 1;
        let mut last = None;
        for attempt in 1..=attempts {
            if attempt > 1 {
                thread::sleep(self.config.backoff(attempt - 1));
            }
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            self.network_calls.fetch_add(1, Ordering::SeqCst);
            let mut req = self
                .agent
                .post(&url)
                .header("Content-Type", "application/json");
            if let Some(key) = &self.config.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            match req.send(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    if (200..300).contains(&status) {
                        return Ok(text);
                    }
                    let err = LlmError::Status {
                        status,
                        attempts: attempt,
                        body: truncate(&text, 200),
                    };
                    if status != 429 && status < 500 {
                        return Err(err);
                    }
                    warn!("HTTP {status} from {url}, attempt {attempt}/{attempts}");
                    last = Some(err);
                }
                Err(e) => {
                    warn!("request to {url} failed, attempt {attempt}/{attempts}: {e}");
                    last = Some(LlmError::Network {
                        attempts: attempt,
                        message: e.to_string(),
                    });
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

fn truncate(s: &str, n: usize) -> String {
    match s.char_indices().nth(n) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_wire_schema() {
        let raw = r#"{"choices":[{"message":{"content":"Yes"}, "logprobs":{"content":[{"token":"Yes","logprob":-0.12,"top_logprobs":[{"token":"Yes","logprob":-0.12},{"token":" No","logprob":-2.3}]}]}}]}"#;
        let r = parse_response(raw, "fx").unwrap();
        assert_eq!(r.text, "Yes");
        let map = r.first_token_top_logprobs.unwrap();
        assert_eq!(map["Yes"], -0.12);
        assert_eq!(map[" No"], -2.3);
        assert_eq!(r.raw_payload_digest.len(), 64);
    }

    #[test]
    fn rejects_positive_logprob_and_empty_choices() {
        let raw = r#"{"choices":[{"message":{"content":"Yes"}, "logprobs":{"content":[{"token":"Yes","logprob":0.5}]}}]}"#;
        assert!(matches!(parse_response(raw, "fx"), Err(LlmError::Malformed(_))));
        assert!(matches!(parse_response(r#"{"choices":[]}"#, "fx"), Err(LlmError::Malformed(_))));
        assert!(matches!(parse_response("not json", "fx"), Err(LlmError::Malformed(_))));
    }

    #[test]
    fn body_is_stable() {
        let req = LlmRequest {
            system_message: "sys".into(),
            human_message: "hi".into(),
            max_new_tokens: 1,
            want_logprobs: true,
            top_logprobs_k: 20,
        };
        assert_eq!(
            request_body(&req, "m"),
            r#"{"model":"m","messages":[{"role":"system","content":"sys"},{"role":"user","content":"hi"}],"temperature":0.0,"max_tokens":1,"logprobs":true,"top_logprobs":20}"#
        );
        let d1 = request_digest("a", "m", &request_body(&req, "m"));
        let d2 = request_digest("b", "m", &request_body(&req, "m"));
        assert_ne!(d1, d2);
    }

    #[test]
    fn backoff_is_capped() {
        let cfg = EndpointConfig {
            backoff_base_ms: 100,
            backoff_cap_ms: 250,
            ..Default::default()
        };
        assert_eq!(cfg.backoff(1), Duration::from_millis(100));
        assert_eq!(cfg.backoff(2), Duration::from_millis(200));
        assert_eq!(cfg.backoff(3), Duration::from_millis(250));
        assert_eq!(cfg.backoff(80), Duration::from_millis(250));
    }
}
