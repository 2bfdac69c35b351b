//! Blocking JSON-over-HTTP transport shared by the chat and embedding
//! backends: retries with exponential backoff, a token-bucket rate limiter
//! and an in-flight cap.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, backoff_ms: 500, timeout_secs: 60 }
    }
}

impl RetryPolicy {
    fn delay(&self, retry: u32) -> Duration {
        Duration::from_millis(self.backoff_ms.saturating_mul(1u64 << retry.min(16)))
    }
}

/// Token bucket: `rate` requests per second with a burst of `max(1, rate)`.
#[derive(Debug)]
pub struct RateLimiter {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(requests_per_second: f64) -> Self {
        assert!(requests_per_second > 0.0, "rate must be positive");
        let capacity = requests_per_second.max(1.0);
        Self { rate: requests_per_second, capacity, state: Mutex::new((capacity, Instant::now())) }
    }

    /// Blocks until a token is available.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().expect("rate limiter poisoned");
                let now = Instant::now();
                let (tokens, last) = *state;
                let tokens = (tokens + now.duration_since(last).as_secs_f64() * self.rate).min(self.capacity);
                if tokens >= 1.0 {
                    *state = (tokens - 1.0, now);
                    return;
                }
                *state = (tokens, now);
                Duration::from_secs_f64((1.0 - tokens) / self.rate)
            };
            thread::sleep(wait);
        }
    }
}

/// Caps the number of requests in flight.
#[derive(Debug)]
pub struct InFlightLimit {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightGuard<'a>(&'a InFlightLimit);

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        Self { max: max.max(1), current: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn enter(&self) -> InFlightGuard<'_> {
        let mut current = self.current.lock().expect("limit poisoned");
        while *current >= self.max {
            current = self.freed.wait(current).expect("limit poisoned");
        }
        *current += 1;
        InFlightGuard(self)
    }

    pub fn in_flight(&self) -> usize {
        *self.current.lock().expect("limit poisoned")
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.current.lock().expect("limit poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug)]
pub struct HttpClient {
    agent: ureq::Agent,
    retry: RetryPolicy,
    limiter: Option<RateLimiter>,
    in_flight: InFlightLimit,
}

impl HttpClient {
    pub fn new(retry: RetryPolicy, requests_per_second: Option<f64>, max_in_flight: usize) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(retry.timeout_secs)).build();
        Self {
            agent,
            retry,
            limiter: requests_per_second.map(RateLimiter::new),
            in_flight: InFlightLimit::new(max_in_flight),
        }
    }

    /// POSTs `body` and parses a JSON reply. Transport failures, HTTP 429 and
    /// 5xx are retried; other statuses fail immediately. Returns the number of
    /// attempts alongside the body.
    pub fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<(Value, u32), LlmError> {
        let _slot = self.in_flight.enter();
        let mut attempts = 0;
        loop {
            attempts += 1;
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            let mut request = self.agent.post(url).set("Content-Type", "application/json");
            if let Some(token) = bearer {
                request = request.set("Authorization", &format!("Bearer {token}"));
            }
            let (retryable, message) = match request.send_json(body.clone()) {
                Ok(resp) => {
                    return resp
                        .into_json::<Value>()
                        .map(|v| (v, attempts))
                        .map_err(|e| LlmError::Malformed(format!("invalid JSON body: {e}")));
                }
                Err(ureq::Error::Status(code, resp)) => {
                    let text = resp.into_string().unwrap_or_default();
                    (code == 429 || code >= 500, format!("HTTP {code}: {text}"))
                }
                Err(ureq::Error::Transport(t)) => (true, t.to_string()),
            };
            if !retryable || attempts > self.retry.max_retries {
                return Err(LlmError::Transport { attempts, message });
            }
            log::warn!("request to {url} failed ({message}); retry {attempts}");
            thread::sleep(self.retry.delay(attempts - 1));
        }
    }
}

#[cfg(test)]
pub(crate) mod mock {
    //! Scripted single-threaded HTTP server for transport tests.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};
    use std::thread::JoinHandle;

    pub struct MockServer {
        pub url: String,
        pub requests: Arc<Mutex<Vec<String>>>,
        handle: Option<JoinHandle<()>>,
    }

    impl MockServer {
        /// Serves each `(status, body)` in order, one connection each.
        pub fn start(script: Vec<(u16, String)>) -> Self {
            let listener = TcpListener::bind("127.0.0.1:0").unwrap();
            let url = format!("http://{}", listener.local_addr().unwrap());
            let requests = Arc::new(Mutex::new(Vec::new()));
            let seen = Arc::clone(&requests);
            let handle = std::thread::spawn(move || {
                for (status, body) in script {
                    let (stream, _) = listener.accept().unwrap();
                    let mut reader = BufReader::new(stream);
                    let mut length = 0usize;
                    loop {
                        let mut line = String::new();
                        reader.read_line(&mut line).unwrap();
                        if line == "\r\n" || line.is_empty() {
                            break;
                        }
                        let lower = line.to_ascii_lowercase();
                        if let Some(v) = lower.strip_prefix("content-length:") {
                            length = v.trim().parse().unwrap();
                        }
                    }
                    let mut buf = vec![0u8; length];
                    reader.read_exact(&mut buf).unwrap();
                    seen.lock().unwrap().push(String::from_utf8(buf).unwrap());
                    let mut stream = reader.into_inner();
                    let reply = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                        body.len()
                    );
                    stream.write_all(reply.as_bytes()).unwrap();
                }
            });
            Self { url, requests, handle: Some(handle) }
        }

        pub fn finish(mut self) -> Vec<String> {
            self.handle.take().unwrap().join().unwrap();
            self.requests.lock().unwrap().clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::mock::MockServer;
    use super::*;
    use serde_json::json;
    use std::sync::Arc;

    fn fast() -> RetryPolicy {
        RetryPolicy { max_retries: 2, backoff_ms: 1, timeout_secs: 5 }
    }

    #[test]
    fn retries_429_then_succeeds() {
        let server = MockServer::start(vec![(429, "{}".into()), (200, r#"{"ok":true}"#.into())]);
        let client = HttpClient::new(fast(), None, 4);
        let (value, attempts) = client.post_json(&server.url, Some("k"), &json!({"a": 1})).unwrap();
        assert_eq!(value, json!({"ok": true}));
        assert_eq!(attempts, 2);
        assert_eq!(server.finish().len(), 2);
    }

    #[test]
    fn gives_up_after_retry_cap() {
        let server = MockServer::start(vec![(503, "{}".into()); 3]);
        let client = HttpClient::new(fast(), None, 4);
        match client.post_json(&server.url, None, &json!({})) {
            Err(LlmError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("unexpected {other:?}"),
        }
        server.finish();
    }

    #[test]
    fn client_errors_are_not_retried() {
        let server = MockServer::start(vec![(400, "{}".into())]);
        let client = HttpClient::new(fast(), None, 4);
        assert!(matches!(
            client.post_json(&server.url, None, &json!({})),
            Err(LlmError::Transport { attempts: 1, .. })
        ));
        server.finish();
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let limiter = RateLimiter::new(50.0);
        let start = Instant::now();
        for _ in 0..60 {
            limiter.acquire();
        }
        // burst of 50, then 10 more at 50/s
        assert!(start.elapsed() >= Duration::from_millis(150));
    }

    #[test]
    fn in_flight_limit_is_respected() {
        let limit = Arc::new(InFlightLimit::new(2));
        let peak = Arc::new(Mutex::new(0usize));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let limit = Arc::clone(&limit);
                let peak = Arc::clone(&peak);
                thread::spawn(move || {
                    let _g = limit.enter();
                    let now = limit.in_flight();
                    let mut p = peak.lock().unwrap();
                    *p = (*p).max(now);
                    drop(p);
                    thread::sleep(Duration::from_millis(5));
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(*peak.lock().unwrap() <= 2);
        assert_eq!(limit.in_flight(), 0);
    }
}
