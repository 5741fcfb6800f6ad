//! A minimal local chat-completions server for offline tests and dry runs.
//!
//! The server answers `POST /v1/chat/completions` by calling a handler with
//! the decoded request and counts every request it receives.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_json::{json, Value};

/// A decoded request as seen by the handler.
#[derive(Debug, Clone)]
pub struct FixtureRequest {
    pub body: Value,
    pub system: String,
    pub user: String,
}

impl FixtureRequest {
    fn from_body(body: Value) -> Self {
        let mut system = String::new();
        let mut user = String::new();
        if let Some(msgs) = body.get("messages").and_then(Value::as_array) {
            for m in msgs {
                let content = m.get("content").and_then(Value::as_str).unwrap_or_default();
                match m.get("role").and_then(Value::as_str) {
                    Some("system") => system = content.to_string(),
                    Some("user") => user = content.to_string(),
                    _ => {}
                }
            }
        }
        FixtureRequest { body, system, user }
    }

    /// The pair named in the final line of the user message, either quoted
    /// (`"s o"`) or in the `Does a/an s o exist` form. Single-word
    /// primitives only.
    pub fn query_pair(&self) -> Option<(String, String)> {
        let last = self.user.lines().rev().find(|l| l.contains("Does") || l.contains('"'))?;
        let words: Vec<&str> = if let Some(start) = last.find('"') {
            let rest = &last[start + 1..];
            let end = rest.find('"')?;
            rest[..end].split(' ').collect()
        } else {
            let rest = last.strip_prefix("Does ")?;
            let rest = rest.split(" exist").next()?;
            rest.split(' ').skip(1).collect()
        };
        match words.as_slice() {
            [s, o] => Some((s.to_string(), o.to_string())),
            _ => None,
        }
    }

    pub fn wants_logprobs(&self) -> bool {
        self.body.get("logprobs").and_then(Value::as_bool).unwrap_or(false)
    }
}

#[derive(Debug, Clone)]
pub struct FixtureReply {
    pub status: u16,
    pub body: String,
}

impl FixtureReply {
    /// A chat completion with `text` as content and `top` as the first
    /// token's top log-probabilities.
    pub fn chat(text: &str, top: &[(&str, f64)]) -> Self {
        let first = top.first().map(|t| t.0).unwrap_or(text);
        let first_lp = top.first().map(|t| t.1).unwrap_or(0.0);
        let mut choice = json!({
            "index": 0,
            "message": {"role": "assistant", "content": text},
            "finish_reason": "stop",
        });
        if !top.is_empty() {
            choice["logprobs"] = json!({
                "content": [{
                    "token": first,
                    "logprob": first_lp,
                    "top_logprobs": top.iter().map(|(t, l)| json!({"token": t, "logprob": l})).collect::<Vec<_>>(),
                }]
            });
        }
        let body = json!({
            "id": "fixture",
            "object": "chat.completion",
            "model": "fixture-model",
            "choices": [choice],
        });
        FixtureReply {
            status: 200,
            body: body.to_string(),
        }
    }

    pub fn status(status: u16) -> Self {
        FixtureReply {
            status,
            body: json!({"error": {"message": "fixture error"}}).to_string(),
        }
    }

    pub fn raw(status: u16, body: impl Into<String>) -> Self {
        FixtureReply {
            status,
            body: body.into(),
        }
    }
}

type Handler = dyn Fn(&FixtureRequest) -> FixtureReply + Send + Sync;

struct Shared {
    handler: Box<Handler>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    delay: Duration,
    shutdown: AtomicBool,
}

pub struct FixtureServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
}

impl FixtureServer {
    pub fn start<F>(handler: F) -> io::Result<Self>
    where
        F: Fn(&FixtureRequest) -> FixtureReply + Send + Sync + 'static,
    {
        Self::start_with_delay(handler, Duration::ZERO)
    }

    /// Like [`FixtureServer::start`], holding every response for `delay`.
    pub fn start_with_delay<F>(handler: F, delay: Duration) -> io::Result<Self>
    where
        F: Fn(&FixtureRequest) -> FixtureReply + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            handler: Box::new(handler),
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            delay,
            shutdown: AtomicBool::new(false),
        });
        let accept_shared = Arc::clone(&shared);
        let accept = thread::spawn(move || {
            for stream in listener.incoming() {
                if accept_shared.shutdown.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let conn_shared = Arc::clone(&accept_shared);
                thread::spawn(move || {
                    let _ = serve(stream, &conn_shared);
                });
            }
        });
        Ok(FixtureServer {
            addr,
            shared,
            accept: Some(accept),
        })
    }

    /// Base URL including `/v1`.
    pub fn url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    /// Requests received so far.
    pub fn calls(&self) -> usize {
        self.shared.calls.load(Ordering::SeqCst)
    }

    /// Highest number of requests handled at the same time.
    pub fn max_in_flight(&self) -> usize {
        self.shared.max_in_flight.load(Ordering::SeqCst)
    }
}

impl Drop for FixtureServer {
    fn drop(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    if reader.read_line(&mut request_line)? == 0 {
        return Ok(());
    }
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.trim().eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;

    let mut parts = request_line.split_whitespace();
    let (method, path) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
    let reply = if method != "POST" || path != "/v1/chat/completions" {
        FixtureReply::status(404)
    } else {
        shared.calls.fetch_add(1, Ordering::SeqCst);
        let now = shared.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        shared.max_in_flight.fetch_max(now, Ordering::SeqCst);
        let reply = match serde_json::from_slice::<Value>(&body) {
            Ok(v) => (shared.handler)(&FixtureRequest::from_body(v)),
            Err(_) => FixtureReply::status(400),
        };
        if !shared.delay.is_zero() {
            thread::sleep(shared.delay);
        }
        shared.in_flight.fetch_sub(1, Ordering::SeqCst);
        reply
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        reply.status,
        reason(reply.status),
        reply.body.len()
    )?;
    out.write_all(reply.body.as_bytes())?;
    out.flush()
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_pair_forms() {
        let req = |user: &str| FixtureRequest {
            body: Value::Null,
            system: String::new(),
            user: user.into(),
        };
        assert_eq!(
            req("Does an old dog exist in the real world?").query_pair(),
            Some(("old".into(), "dog".into()))
        );
        assert_eq!(
            req("list\n- a b\nDoes \"dark fire\" fit into the list above?").query_pair(),
            Some(("dark".into(), "fire".into()))
        );
    }
}
