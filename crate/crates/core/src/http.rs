//! Small blocking JSON-over-HTTP client shared by the completion backend and
//! the remote scorer. Bounds in-flight requests, applies a per-request
//! timeout, and retries idempotent calls on transport failures.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct HttpOptions {
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub retries: u32,
}

impl Default for HttpOptions {
    fn default() -> Self {
        HttpOptions {
            timeout: Duration::from_secs(60),
            max_in_flight: 8,
            retries: 2,
        }
    }
}

#[derive(Debug)]
struct Limiter {
    in_flight: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|p| p.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|p| p.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|p| p.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug)]
pub struct JsonClient {
    base: String,
    token: Option<String>,
    agent: ureq::Agent,
    limiter: Limiter,
    retries: u32,
}

impl JsonClient {
    pub fn new(base: impl Into<String>, token: Option<String>, opts: HttpOptions) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(opts.timeout))
            .http_status_as_error(false)
            .build();
        JsonClient {
            base: base.into().trim_end_matches('/').to_owned(),
            token,
            agent: ureq::Agent::new_with_config(config),
            limiter: Limiter {
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
                max: opts.max_in_flight.max(1),
            },
            retries: opts.retries,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    /// POSTs `body` to `base + path` and returns the raw response body of a
    /// 2xx reply. Only `idempotent` calls are retried.
    pub fn post<B: Serialize>(&self, path: &str, body: &B, idempotent: bool) -> Result<Vec<u8>> {
        let url = format!("{}{}", self.base, path);
        let payload = serde_json::to_vec(body).map_err(|e| Error::Payload {
            endpoint: url.clone(),
            message: e.to_string(),
        })?;
        let attempts = if idempotent { self.retries + 1 } else { 1 };
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                log::warn!("retrying {url} (attempt {})", attempt + 1);
            }
            match self.post_once(&url, &payload) {
                Ok(bytes) => return Ok(bytes),
                Err(e @ Error::Transport { .. }) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn post_once(&self, url: &str, payload: &[u8]) -> Result<Vec<u8>> {
        let _permit = self.limiter.acquire();
        let mut req = self
            .agent
            .post(url)
            .header("content-type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("authorization", &format!("Bearer {t}"));
        }
        let transport = |message: String| Error::Transport {
            endpoint: url.to_owned(),
            message,
        };
        let mut resp = req.send(payload).map_err(|e| transport(e.to_string()))?;
        let status = resp.status();
        let bytes = resp
            .body_mut()
            .read_to_vec()
            .map_err(|e| transport(e.to_string()))?;
        if status.is_server_error() {
            return Err(transport(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Error::Payload {
                endpoint: url.to_owned(),
                message: format!("HTTP {status}: {}", String::from_utf8_lossy(&bytes)),
            });
        }
        Ok(bytes)
    }
}

/// Minimal single-threaded HTTP/1.1 responder for tests: serves canned
/// replies, one per accepted connection, and records request bodies.
#[doc(hidden)]
pub mod testing {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};
    use std::thread;

    pub struct CannedServer {
        pub url: String,
        pub requests: Arc<Mutex<Vec<(String, String)>>>,
    }

    /// Each reply is `(status, body)`; after they are exhausted the last one
    /// repeats. A status of 0 means "close the socket without answering";
    /// 1 means "hold the connection open for a few seconds, then close".
    pub fn serve(replies: Vec<(u16, String)>) -> CannedServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        thread::spawn(move || {
            for (i, stream) in listener.incoming().enumerate() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                reader.read_line(&mut request_line).unwrap();
                let mut len = 0usize;
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    if h.trim().is_empty() {
                        break;
                    }
                    let lower = h.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                let path = request_line.split_whitespace().nth(1).unwrap_or("").to_owned();
                log.lock().unwrap().push((path, String::from_utf8_lossy(&body).into_owned()));
                let (status, reply) = replies[i.min(replies.len() - 1)].clone();
                if status == 0 {
                    continue;
                }
                if status == 1 {
                    thread::sleep(std::time::Duration::from_secs(3));
                    continue;
                }
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                    reply.len()
                );
            }
        });
        CannedServer { url, requests }
    }
}
