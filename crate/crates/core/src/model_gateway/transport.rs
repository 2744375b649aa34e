//! Blocking JSON-over-HTTP transport with bearer auth, exponential-backoff
//! retries on transient failures, and an optional token-bucket rate limit.

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

/// Environment variable holding the bearer token for remote backends.
pub const API_KEY_ENV: &str = "GEOSKILL_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("authentication failed (HTTP {status})")]
    Auth { status: u16 },
    #[error("request timed out")]
    Timeout,
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<TransportError> },
}

impl TransportError {
    fn is_transient(&self) -> bool {
        match self {
            TransportError::Timeout | TransportError::Connection(_) => true,
            TransportError::Status { status, .. } => matches!(status, 408 | 429 | 500 | 502 | 503 | 504),
            _ => false,
        }
    }

    /// The underlying failure, looking through retry exhaustion.
    pub fn root(&self) -> &TransportError {
        match self {
            TransportError::Exhausted { last, .. } => last.root(),
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, base_delay: Duration::from_millis(500), max_delay: Duration::from_secs(8) }
    }
}

impl RetryPolicy {
    pub fn delay_for(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug)]
struct TokenBucket {
    capacity: f64,
    tokens: f64,
    per_second: f64,
    last: Instant,
}

impl TokenBucket {
    fn new(per_second: f64) -> Self {
        let capacity = per_second.max(1.0);
        TokenBucket { capacity, tokens: capacity, per_second, last: Instant::now() }
    }

    /// Time to wait before a token is available; takes the token.
    fn reserve(&mut self) -> Duration {
        let now = Instant::now();
        self.tokens = (self.tokens + now.duration_since(self.last).as_secs_f64() * self.per_second).min(self.capacity);
        self.last = now;
        self.tokens -= 1.0;
        if self.tokens >= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(-self.tokens / self.per_second)
        }
    }
}

pub struct HttpTransport {
    agent: ureq::Agent,
    api_key: Option<String>,
    retry: RetryPolicy,
    limiter: Option<Mutex<TokenBucket>>,
}

impl HttpTransport {
    pub fn new(timeout: Duration, retry: RetryPolicy) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        HttpTransport {
            agent: config.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            retry,
            limiter: None,
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    /// Limits outgoing requests to `per_second` on average.
    pub fn with_rate_limit(mut self, per_second: Option<f64>) -> Self {
        self.limiter = per_second.filter(|r| *r > 0.0).map(|r| Mutex::new(TokenBucket::new(r)));
        self
    }

    fn attempt(&self, url: &str, body: &str) -> Result<String, TransportError> {
        if let Some(limiter) = &self.limiter {
            let wait = limiter.lock().expect("rate limiter poisoned").reserve();
            if !wait.is_zero() {
                thread::sleep(wait);
            }
        }
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(classify)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(classify)?;
        match status {
            200..=299 => Ok(text),
            401 | 403 => Err(TransportError::Auth { status }),
            _ => Err(TransportError::Status { status, body: text }),
        }
    }

    /// POSTs a JSON body and returns the response text, retrying transient
    /// failures with exponential backoff.
    pub fn post_json(&self, url: &str, body: &str) -> Result<String, TransportError> {
        let mut retry = 0;
        loop {
            match self.attempt(url, body) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_transient() && retry < self.retry.max_retries => {
                    thread::sleep(self.retry.delay_for(retry));
                    retry += 1;
                }
                Err(e) if retry > 0 => {
                    return Err(TransportError::Exhausted { attempts: retry + 1, last: Box::new(e) })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

fn classify(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => TransportError::Timeout,
        other => TransportError::Connection(other.to_string()),
    }
}
