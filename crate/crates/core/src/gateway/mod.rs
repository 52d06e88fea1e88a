//! Query dispatch to a vision chat-completion endpoint or the seeded mock,
//! and parsing of the reply into a decision and explanation.

mod http;
mod legality;
mod mock;
mod parse;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::key::ConditionKey;
use crate::prompt::DecisionInstruction;
use crate::scenario::Scene;

pub use http::{build_request_body, ChatClient, API_KEY_ENV};
pub use legality::{check_legality_acknowledgment, default_patterns, LegalityMatcher, REGEX_PREFIX};
pub use mock::{render_reply, Behavior, CellMatch, MockEndpoint, MockOutput, MockRule, MockScript};
pub use parse::{parse_decision, Decision};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelEndpoint {
    pub base_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub timeout_s: f64,
    pub max_retries: u32,
    /// First backoff delay; doubles after every transient failure.
    pub backoff_ms: u64,
    /// Minimum spacing between request starts, if set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub requests_per_second: Option<f64>,
}

impl Default for ModelEndpoint {
    fn default() -> Self {
        ModelEndpoint {
            base_url: "https://api.openai.com/v1".to_owned(),
            model_name: "gpt-4.1".to_owned(),
            temperature: 1.0,
            top_p: 1.0,
            timeout_s: 120.0,
            max_retries: 3,
            backoff_ms: 500,
            requests_per_second: None,
        }
    }
}

impl ModelEndpoint {
    pub fn with_model(&self, model: &str) -> Self {
        ModelEndpoint {
            model_name: model.to_owned(),
            ..self.clone()
        }
    }

    pub fn snapshot(&self) -> EndpointSnapshot {
        EndpointSnapshot {
            model: self.model_name.clone(),
            temperature: self.temperature,
            top_p: self.top_p,
        }
    }
}

/// Decoding settings recorded with every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointSnapshot {
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
}

pub struct QueryRequest<'a> {
    pub endpoint: &'a ModelEndpoint,
    pub key: &'a ConditionKey,
    /// 0 for the first query of a slot, incremented on every re-query.
    pub attempt: u32,
    /// Stage directory of the slot, when issued by a stage runner.
    pub stage: Option<&'a str>,
    pub instruction: &'a DecisionInstruction,
    pub scene: &'a Scene,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawReply {
    pub text: String,
    /// Synthetic latency reported by the source; wall-clock time is used when absent.
    pub latency_s: Option<f64>,
}

/// A source of raw model replies. Implementations return
/// [`Error::Transient`] for retryable transport failures and
/// [`Error::Fatal`] for rejected requests.
pub trait Responder: Send + Sync {
    fn respond(&self, request: &QueryRequest<'_>) -> Result<RawReply>;
}

impl<R: Responder + ?Sized> Responder for &R {
    fn respond(&self, request: &QueryRequest<'_>) -> Result<RawReply> {
        (**self).respond(request)
    }
}

impl<R: Responder + ?Sized> Responder for Box<R> {
    fn respond(&self, request: &QueryRequest<'_>) -> Result<RawReply> {
        (**self).respond(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub decision: Decision,
    pub explanation: String,
    pub legality_acknowledged: bool,
    pub raw: String,
    pub latency_s: f64,
    pub word_count: usize,
}

/// Sends one query, retrying transient failures with exponential backoff.
/// A reply without a decision line is returned as [`Error::Parse`] and is
/// not retried here.
pub fn query(
    responder: &dyn Responder,
    request: &QueryRequest<'_>,
    legality: Option<&LegalityMatcher>,
) -> Result<ParsedResponse> {
    let endpoint = request.endpoint;
    let mut failures = 0u32;
    let (reply, elapsed) = loop {
        let started = Instant::now();
        match responder.respond(request) {
            Ok(reply) => break (reply, started.elapsed()),
            Err(Error::Transient(msg)) if failures < endpoint.max_retries => {
                let delay = endpoint.backoff_ms.saturating_mul(1 << failures.min(16));
                log::warn!(
                    "transient failure on {} (attempt {}): {msg}; retrying in {delay} ms",
                    request.key.slot_id(),
                    failures + 1
                );
                failures += 1;
                std::thread::sleep(Duration::from_millis(delay));
            }
            Err(e) => return Err(e),
        }
    };
    let latency_s = reply.latency_s.unwrap_or(elapsed.as_secs_f64());
    let (decision, explanation) = parse_decision(&reply.text)?;
    let legality_acknowledged = legality.is_some_and(|m| m.matches(&explanation));
    let word_count = explanation.split_whitespace().count();
    Ok(ParsedResponse {
        decision,
        explanation,
        legality_acknowledged,
        raw: reply.text,
        latency_s,
        word_count,
    })
}
