//! HTTP client for a masked-LM scoring server.
//!
//! Wire protocol, version 1:
//!
//! * `POST {base}/v1/score` with `{"sentences": [["tok", ...], ...]}` returns
//!   `{"scores": [[nll, ...], ...]}`, one NLL in nats per word token. A
//!   malformed request gets 400 with `{"error": "..."}`; 503 means the model
//!   is not loaded yet.
//! * `GET {base}/v1/health` returns
//!   `{"model": "...", "agg": "joint-mask-sum" | "independent-mask-sum", "version": 1}`.
//!
//! Masking, `[CLS]`/`[SEP]` framing and word-piece aggregation all happen on
//! the server. Every response is validated here before it reaches scoring.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use crate::error::ScorerError;
use crate::scoring::{BatchError, TokenScorer};

pub const PROTOCOL_VERSION: u32 = 1;

/// Environment variable supplying the endpoint URL when no scorer is named explicitly.
pub const ENDPOINT_ENV: &str = "DELPATH_SCORER_URL";

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    /// Wait before retry `i` is `backoff[i]`, repeating the last entry.
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff: vec![Duration::from_millis(200), Duration::from_secs(1)],
        }
    }
}

impl RetryPolicy {
    fn delay(&self, retry: usize) -> Duration {
        self.backoff
            .get(retry)
            .or(self.backoff.last())
            .copied()
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerEndpoint {
    pub base_url: String,
    pub timeout: Duration,
    pub max_batch: usize,
    pub retry: RetryPolicy,
}

impl ScorerEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(60),
            max_batch: 64,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    JointMaskSum,
    IndependentMaskSum,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::JointMaskSum => "joint-mask-sum",
            Aggregation::IndependentMaskSum => "independent-mask-sum",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub model: String,
    pub agg: Aggregation,
    pub version: u32,
}

#[derive(Debug, Serialize)]
pub struct ScoreRequest<'a> {
    pub sentences: &'a [Vec<&'a str>],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

/// Production [`TokenScorer`] backed by a remote server.
#[derive(Debug)]
pub struct RemoteScorer {
    endpoint: ScorerEndpoint,
    client: Client,
    requests: AtomicU64,
}

impl RemoteScorer {
    pub fn new(endpoint: ScorerEndpoint) -> Result<Self, ScorerError> {
        if endpoint.max_batch == 0 {
            return Err(ScorerError::Other("max_batch must be >= 1".into()));
        }
        let client = Client::builder()
            .timeout(endpoint.timeout)
            .build()
            .map_err(|e| ScorerError::Other(e.to_string()))?;
        Ok(Self {
            endpoint,
            client,
            requests: AtomicU64::new(0),
        })
    }

    pub fn endpoint(&self) -> &ScorerEndpoint {
        &self.endpoint
    }

    /// HTTP requests sent so far, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.endpoint.base_url, path)
    }

    /// Sends with retries on transport failures and 5xx responses.
    fn send(
        &self,
        build: impl Fn() -> reqwest::blocking::RequestBuilder,
    ) -> Result<Response, ScorerError> {
        let attempts = self.endpoint.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.endpoint.retry.delay(attempt - 1));
            }
            self.requests.fetch_add(1, Ordering::Relaxed);
            match build().send() {
                Ok(resp) if resp.status().is_server_error() => {
                    last = format!("HTTP {}", resp.status());
                }
                Ok(resp) => return Ok(resp),
                Err(e) => last = e.to_string(),
            }
        }
        Err(ScorerError::Transport {
            attempts,
            message: last,
        })
    }

    pub fn health(&self) -> Result<Health, ScorerError> {
        let resp = self.send(|| self.client.get(self.url("/v1/health")))?;
        let status = resp.status();
        let body = resp
            .text()
            .map_err(|e| ScorerError::MalformedBody(e.to_string()))?;
        if status != StatusCode::OK {
            return Err(rejected(status, &body));
        }
        let health: Health =
            serde_json::from_str(&body).map_err(|e| ScorerError::MalformedBody(e.to_string()))?;
        if health.version != PROTOCOL_VERSION {
            return Err(ScorerError::IncompatibleVersion {
                expected: PROTOCOL_VERSION,
                got: health.version,
            });
        }
        Ok(health)
    }

    /// Scores `sentences`, split into requests of at most `max_batch`.
    /// Errors carry the index of the offending sentence in `sentences`.
    pub fn remote_score(&self, sentences: &[Vec<&str>]) -> Result<Vec<Vec<f64>>, BatchError> {
        if let Some(index) = sentences.iter().position(Vec::is_empty) {
            return Err(BatchError {
                index,
                source: ScorerError::Other("empty sentence".into()),
            });
        }
        let mut out = Vec::with_capacity(sentences.len());
        for (chunk_no, chunk) in sentences.chunks(self.endpoint.max_batch).enumerate() {
            let offset = chunk_no * self.endpoint.max_batch;
            let scores = self.score_chunk(chunk).map_err(|(i, source)| BatchError {
                index: offset + i,
                source,
            })?;
            out.extend(scores);
        }
        Ok(out)
    }

    fn score_chunk(&self, chunk: &[Vec<&str>]) -> Result<Vec<Vec<f64>>, (usize, ScorerError)> {
        let body = serde_json::to_vec(&ScoreRequest { sentences: chunk })
            .map_err(|e| (0, ScorerError::Other(e.to_string())))?;
        let resp = self
            .send(|| {
                self.client
                    .post(self.url("/v1/score"))
                    .header(reqwest::header::CONTENT_TYPE, "application/json")
                    .body(body.clone())
            })
            .map_err(|e| (0, e))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| (0, ScorerError::MalformedBody(e.to_string())))?;
        if status != StatusCode::OK {
            return Err((0, rejected(status, &text)));
        }
        let parsed: ScoreResponse = serde_json::from_str(&text)
            .map_err(|e| (0, ScorerError::MalformedBody(e.to_string())))?;
        validate_response(chunk, parsed.scores)
    }
}

fn rejected(status: StatusCode, body: &str) -> ScorerError {
    let message = serde_json::from_str::<ErrorBody>(body)
        .map(|b| b.error)
        .unwrap_or_else(|_| body.chars().take(200).collect());
    ScorerError::Rejected {
        status: status.as_u16(),
        message,
    }
}

/// Total check of a response against its request.
pub fn validate_response(
    request: &[Vec<&str>],
    scores: Vec<Vec<f64>>,
) -> Result<Vec<Vec<f64>>, (usize, ScorerError)> {
    if scores.len() != request.len() {
        let index = scores.len().min(request.len());
        return Err((
            index,
            ScorerError::Protocol {
                index,
                message: format!(
                    "{} score vectors for {} sentences",
                    scores.len(),
                    request.len()
                ),
            },
        ));
    }
    for (index, (sentence, v)) in request.iter().zip(&scores).enumerate() {
        let violation = |message: String| (index, ScorerError::Protocol { index, message });
        if v.len() != sentence.len() {
            return Err(violation(format!(
                "{} scores for {} tokens",
                v.len(),
                sentence.len()
            )));
        }
        if let Some((pos, x)) = v
            .iter()
            .enumerate()
            .find(|(_, x)| !x.is_finite() || **x < 0.0)
        {
            return Err(violation(format!("invalid NLL {x} at token {pos}")));
        }
    }
    Ok(scores)
}

impl TokenScorer for RemoteScorer {
    fn score(&self, tokens: &[&str]) -> Result<Vec<f64>, ScorerError> {
        self.remote_score(&[tokens.to_vec()])
            .map(|mut v| v.remove(0))
            .map_err(|e| e.source)
    }

    fn score_batch(&self, batch: &[Vec<&str>]) -> Result<Vec<Vec<f64>>, BatchError> {
        self.remote_score(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_names_sentence() {
        let req = vec![vec!["a", "b"], vec!["c"]];
        let err = validate_response(&req, vec![vec![0.1], vec![0.2]]).unwrap_err();
        assert_eq!(err.0, 0);
        let err = validate_response(&req, vec![vec![0.1, 0.2], vec![-0.2]]).unwrap_err();
        assert_eq!(err.0, 1);
        let err = validate_response(&req, vec![vec![0.1, 0.2]]).unwrap_err();
        assert_eq!(err.0, 1);
        assert!(validate_response(&req, vec![vec![0.1, 0.2], vec![0.0]]).is_ok());
    }

    #[test]
    fn backoff_repeats_last() {
        let p = RetryPolicy {
            max_attempts: 5,
            backoff: vec![Duration::from_millis(1), Duration::from_millis(7)],
        };
        assert_eq!(p.delay(0), Duration::from_millis(1));
        assert_eq!(p.delay(4), Duration::from_millis(7));
    }

    #[test]
    fn health_json_shape() {
        let h: Health = serde_json::from_str(
            r#"{"model":"bert-base-uncased","agg":"joint-mask-sum","version":1}"#,
        )
        .unwrap();
        assert_eq!(h.agg, Aggregation::JointMaskSum);
        assert_eq!(
            serde_json::to_string(&h).unwrap(),
            r#"{"model":"bert-base-uncased","agg":"joint-mask-sum","version":1}"#
        );
    }

    #[test]
    fn request_json_shape() {
        let s = vec![vec!["america", "."]];
        assert_eq!(
            serde_json::to_string(&ScoreRequest { sentences: &s }).unwrap(),
            r#"{"sentences":[["america","."]]}"#
        );
    }
}
