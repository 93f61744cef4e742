//! JSON-over-HTTP client for model servers.
//!
//! Endpoints (all `POST`, JSON bodies):
//!
//! | path                | request                                   | response                                   |
//! |---------------------|-------------------------------------------|--------------------------------------------|
//! | `/v1/logprob`       | `{"instruction", "response"}`             | `{"token_logprobs": [f64], "total": f64}`  |
//! | `/v1/reward`        | `{"instruction", "response"}`             | `{"score": f64}`                           |
//! | `/v1/embed`         | `{"text"}`                                | `{"vector": [f64]}`                        |
//! | `/v1/generate_worse`| `{"instruction", "golden", "n"}`          | `{"responses": [str]}`                     |
//!
//! Batch calls send a JSON array of request objects to the same path and
//! expect an array of responses in the same order.
//!
//! Transport failures, timeouts and 5xx statuses are retried up to
//! `attempts` times in total; other non-2xx statuses fail immediately.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{EmbeddingBackend, LogProbs, PolicyBackend, RewardBackend};
use crate::corpus::{Instruction, Response};
use crate::error::{Result, SeamError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8080`.
    pub endpoint: String,
    pub timeout_ms: u64,
    /// Total attempts per request, first try included.
    pub attempts: u32,
    pub retry_backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            timeout_ms: 30_000,
            attempts: 3,
            retry_backoff_ms: 50,
            max_in_flight: 8,
        }
    }
}

/// Counting gate bounding concurrent in-flight requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug)]
pub struct RemoteClient {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    gate: Gate,
}

enum Attempt {
    Retry(String),
    Fail(SeamError),
}

impl RemoteClient {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        if cfg.endpoint.is_empty() {
            return Err(SeamError::Config(
                "remote endpoint is not configured".into(),
            ));
        }
        if cfg.attempts == 0 {
            return Err(SeamError::Config(
                "remote attempts must be at least 1".into(),
            ));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Gate::new(cfg.max_in_flight);
        Ok(Self { cfg, agent, gate })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.cfg.endpoint.trim_end_matches('/'), path)
    }

    fn attempt<B: Serialize, T: DeserializeOwned>(
        &self,
        url: &str,
        body: &B,
    ) -> std::result::Result<T, Attempt> {
        let _slot = self.gate.acquire();
        let mut resp = self
            .agent
            .post(url)
            .send_json(body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        if status >= 500 {
            return Err(Attempt::Retry(format!("status {status}: {text}")));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fail(SeamError::Service { status, body: text }));
        }
        serde_json::from_str(&text)
            .map_err(|e| Attempt::Fail(SeamError::Protocol(format!("{url}: {e}"))))
    }

    /// POSTs `body` as JSON and decodes the response, with retries.
    pub fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let url = self.url(path);
        let mut last = String::new();
        for n in 0..self.cfg.attempts {
            if n > 0 && self.cfg.retry_backoff_ms > 0 {
                std::thread::sleep(Duration::from_millis(self.cfg.retry_backoff_ms << (n - 1)));
            }
            match self.attempt(&url, body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => last = msg,
            }
        }
        Err(SeamError::Transient {
            attempts: self.cfg.attempts,
            message: last,
        })
    }
}

#[derive(Serialize)]
struct PairRequest<'a> {
    instruction: &'a str,
    response: &'a str,
}

#[derive(Deserialize)]
struct LogprobReply {
    token_logprobs: Vec<f64>,
    total: f64,
}

#[derive(Deserialize)]
struct RewardReply {
    score: f64,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedReply {
    vector: Vec<f64>,
}

#[derive(Serialize)]
struct WorseRequest<'a> {
    instruction: &'a str,
    golden: &'a str,
    n: usize,
}

#[derive(Deserialize)]
struct WorseReply {
    responses: Vec<String>,
}

fn check_logprob(reply: LogprobReply) -> Result<LogProbs> {
    if reply.token_logprobs.is_empty() {
        return Err(SeamError::Protocol("empty token_logprobs".into()));
    }
    if reply
        .token_logprobs
        .iter()
        .any(|x| !x.is_finite() || *x > 0.0)
        || !reply.total.is_finite()
    {
        return Err(SeamError::Protocol(
            "log-probabilities must be finite and <= 0".into(),
        ));
    }
    let sum: f64 = reply.token_logprobs.iter().sum();
    if (sum - reply.total).abs() > 1e-9 * reply.total.abs().max(1.0) {
        return Err(SeamError::Protocol(format!(
            "total {} does not equal the sum of token log-probabilities {sum}",
            reply.total
        )));
    }
    Ok(LogProbs {
        per_token: reply.token_logprobs,
        total: reply.total,
    })
}

fn check_score(score: f64) -> Result<f64> {
    if score.is_finite() {
        Ok(score)
    } else {
        Err(SeamError::Protocol("non-finite reward score".into()))
    }
}

/// Policy served remotely. Only scoring is supported; sampling has no
/// endpoint in the protocol.
#[derive(Debug)]
pub struct RemotePolicy {
    client: RemoteClient,
}

impl RemotePolicy {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        Ok(Self {
            client: RemoteClient::new(cfg)?,
        })
    }

    pub fn logprob_batch(&self, items: &[(&Instruction, &Response)]) -> Result<Vec<LogProbs>> {
        let body: Vec<PairRequest> = items
            .iter()
            .map(|(i, r)| PairRequest {
                instruction: &i.text,
                response: &r.text,
            })
            .collect();
        let replies: Vec<LogprobReply> = self.client.post("/v1/logprob", &body)?;
        if replies.len() != items.len() {
            return Err(SeamError::Protocol(format!(
                "batch of {} returned {} results",
                items.len(),
                replies.len()
            )));
        }
        replies.into_iter().map(check_logprob).collect()
    }
}

impl PolicyBackend for RemotePolicy {
    fn logprob(&self, instruction: &Instruction, response: &Response) -> Result<LogProbs> {
        let reply: LogprobReply = self.client.post(
            "/v1/logprob",
            &PairRequest {
                instruction: &instruction.text,
                response: &response.text,
            },
        )?;
        check_logprob(reply)
    }

    fn sample(&self, _i: &Instruction, _seed: u64, _max_len: usize) -> Result<Response> {
        Err(SeamError::Backend(
            "remote policy does not support sampling".into(),
        ))
    }

    fn fingerprint(&self) -> String {
        format!("remote-policy:{}", self.client.cfg.endpoint)
    }
}

#[derive(Debug)]
pub struct RemoteReward {
    client: RemoteClient,
}

impl RemoteReward {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        Ok(Self {
            client: RemoteClient::new(cfg)?,
        })
    }

    pub fn score_batch(&self, items: &[(&Instruction, &Response)]) -> Result<Vec<f64>> {
        let body: Vec<PairRequest> = items
            .iter()
            .map(|(i, r)| PairRequest {
                instruction: &i.text,
                response: &r.text,
            })
            .collect();
        let replies: Vec<RewardReply> = self.client.post("/v1/reward", &body)?;
        if replies.len() != items.len() {
            return Err(SeamError::Protocol("reward batch length mismatch".into()));
        }
        replies.into_iter().map(|r| check_score(r.score)).collect()
    }
}

impl RewardBackend for RemoteReward {
    fn score(&self, instruction: &Instruction, response: &Response) -> Result<f64> {
        let reply: RewardReply = self.client.post(
            "/v1/reward",
            &PairRequest {
                instruction: &instruction.text,
                response: &response.text,
            },
        )?;
        check_score(reply.score)
    }

    fn fingerprint(&self) -> String {
        format!("remote-reward:{}", self.client.cfg.endpoint)
    }
}

#[derive(Debug)]
pub struct RemoteEmbedding {
    client: RemoteClient,
    dim: usize,
}

impl RemoteEmbedding {
    /// `dim` is the expected vector length; replies of any other length are
    /// protocol errors.
    pub fn new(cfg: RemoteConfig, dim: usize) -> Result<Self> {
        Ok(Self {
            client: RemoteClient::new(cfg)?,
            dim,
        })
    }

    fn check(&self, v: Vec<f64>) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(SeamError::Protocol(format!(
                "expected embedding of dimension {}, got {}",
                self.dim,
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(SeamError::Protocol("non-finite embedding entry".into()));
        }
        Ok(v)
    }

    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let body: Vec<EmbedRequest> = texts.iter().map(|t| EmbedRequest { text: t }).collect();
        let replies: Vec<EmbedReply> = self.client.post("/v1/embed", &body)?;
        if replies.len() != texts.len() {
            return Err(SeamError::Protocol("embed batch length mismatch".into()));
        }
        replies.into_iter().map(|r| self.check(r.vector)).collect()
    }
}

impl EmbeddingBackend for RemoteEmbedding {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let reply: EmbedReply = self.client.post("/v1/embed", &EmbedRequest { text })?;
        self.check(reply.vector)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("remote-embedding:{}:{}", self.client.cfg.endpoint, self.dim)
    }
}

/// Worse-response generator behind `/v1/generate_worse`.
#[derive(Debug)]
pub struct RemoteGenerator {
    client: RemoteClient,
}

impl RemoteGenerator {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        Ok(Self {
            client: RemoteClient::new(cfg)?,
        })
    }

    pub fn generate_worse(&self, instruction: &str, golden: &str, n: usize) -> Result<Vec<String>> {
        let reply: WorseReply = self.client.post(
            "/v1/generate_worse",
            &WorseRequest {
                instruction,
                golden,
                n,
            },
        )?;
        Ok(reply.responses)
    }

    pub fn fingerprint(&self) -> String {
        format!("remote-generator:{}", self.client.cfg.endpoint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconfigured_endpoint_is_config_error() {
        assert!(RemoteClient::new(RemoteConfig::default())
            .unwrap_err()
            .is_config());
    }

    #[test]
    fn logprob_reply_validation() {
        let ok = check_logprob(LogprobReply {
            token_logprobs: vec![-1.0, -0.5],
            total: -1.5,
        })
        .unwrap();
        assert_eq!(ok.total, -1.5);
        assert!(check_logprob(LogprobReply {
            token_logprobs: vec![-1.0],
            total: -2.0
        })
        .is_err());
        assert!(check_logprob(LogprobReply {
            token_logprobs: vec![0.5],
            total: 0.5
        })
        .is_err());
    }

    #[test]
    fn gate_bounds_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Arc;
        let gate = Arc::new(Gate::new(2));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (g, l, p) = (gate.clone(), live.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _s = g.acquire();
                    let now = l.fetch_add(1, Ordering::SeqCst) + 1;
                    p.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    l.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
