//! Model backends: repeated binary sampling, answer-token probabilities, and
//! a deterministic mock, all behind one [`Transport`] abstraction with a
//! per-sample on-disk cache.

mod cache;
mod collect;
mod http;
mod mock;

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::personas::{PromptInstance, PromptKey};

pub use cache::{CachedSample, SampleCache};
pub use collect::{run_collection, CollectionOutcome, CollectionStats, FailureRecord};
pub use http::{answer_distribution, HttpTransport, DEFAULT_API_KEY_ENV};
pub use mock::MockTransport;

/// Probability-mass tolerance above which a pair is flagged.
pub const MASS_DEVIATION_THRESHOLD: f64 = 0.01;
// Slack for decimal thresholds compared against binary floating point sums.
const THRESHOLD_SLACK: f64 = 1e-12;

/// Opening and closing markers of an inline reasoning block.
pub const TRACE_OPEN: &str = "<think>";
pub const TRACE_CLOSE: &str = "</think>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sampling,
    Logprob,
    Mock,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Sampling => "sampling",
            Mode::Logprob => "logprob",
            Mode::Mock => "mock",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(rename = "id")]
    pub backend_id: String,
    pub mode: Mode,
    #[serde(default)]
    pub endpoint_url: String,
    #[serde(rename = "model")]
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Repeats per prompt. Defaults to the run's CI repeat count.
    #[serde(default)]
    pub repeats: Option<u32>,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    #[serde(default = "default_retry_budget")]
    pub retry_budget: u32,
    #[serde(default = "default_backoff")]
    pub retry_backoff_ms: u64,
    #[serde(default)]
    pub seed: u64,
    /// Alternatives requested per token in logprob mode.
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u32,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Name of the environment variable holding the API credential.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

fn default_temperature() -> f64 {
    1.0
}
fn default_parallel() -> usize {
    4
}
fn default_retry_budget() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}
fn default_top_logprobs() -> u32 {
    5
}
fn default_timeout() -> u64 {
    120
}

impl BackendConfig {
    /// A mock backend with the given seed and five repeats.
    pub fn mock(backend_id: &str, seed: u64) -> BackendConfig {
        BackendConfig {
            backend_id: backend_id.to_owned(),
            mode: Mode::Mock,
            endpoint_url: String::new(),
            model_name: "mock".to_owned(),
            temperature: 1.0,
            repeats: Some(5),
            max_parallel: 4,
            retry_budget: 0,
            retry_backoff_ms: 0,
            seed,
            top_logprobs: 5,
            max_tokens: None,
            timeout_secs: 30,
            api_key_env: None,
        }
    }

    /// Effective repeat count; logprob mode always asks once.
    pub fn effective_repeats(&self) -> u32 {
        match self.mode {
            Mode::Logprob => 1,
            _ => self.repeats.unwrap_or(5),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::Config(format!("backend {:?}: {m}", self.backend_id)));
        if self.backend_id.is_empty()
            || !self
                .backend_id
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b"-_.".contains(&b))
            || self.backend_id.starts_with('.')
        {
            return bad("id must be non-empty and use only [A-Za-z0-9_.-]".into());
        }
        if self.model_name.trim().is_empty() {
            return bad("model must be non-empty".into());
        }
        if self.max_parallel == 0 {
            return bad("max_parallel must be at least 1".into());
        }
        match self.mode {
            Mode::Sampling | Mode::Mock if self.repeats == Some(0) => {
                return bad("repeats must be at least 1".into())
            }
            Mode::Logprob if self.repeats.is_some_and(|m| m != 1) => {
                return bad("logprob mode takes exactly one sample per prompt".into())
            }
            Mode::Sampling | Mode::Logprob
                if !(self.endpoint_url.starts_with("http://")
                    || self.endpoint_url.starts_with("https://")
                    || self.endpoint_url.starts_with(mock::MOCK_SCHEME)) =>
            {
                return bad(format!("endpoint_url {:?} is not an http(s) URL", self.endpoint_url))
            }
            _ => {}
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return bad("temperature must be a non-negative number".into());
        }
        Ok(())
    }

    pub(crate) fn backoff(&self, retry: u32) -> Duration {
        let ms = self
            .retry_backoff_ms
            .saturating_mul(1u64 << retry.min(16))
            .min(30_000);
        Duration::from_millis(ms)
    }
}

/// Raw probabilities of the "0" and "1" answer tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbPair {
    pub p0: f64,
    pub p1: f64,
    pub mass_deviation: f64,
    pub deviation_flag: bool,
}

impl ProbPair {
    pub fn new(p0: f64, p1: f64) -> ProbPair {
        let mass_deviation = (1.0 - (p0 + p1)).abs();
        ProbPair {
            p0,
            p1,
            mass_deviation,
            deviation_flag: mass_deviation > MASS_DEVIATION_THRESHOLD + THRESHOLD_SLACK,
        }
    }
}

/// Reads the "0" / "1" token probabilities without renormalizing.
pub fn extract_prob_pair(distribution: &BTreeMap<String, f64>) -> ProbPair {
    let p0 = distribution.get("0").copied().unwrap_or(0.0);
    let p1 = distribution.get("1").copied().unwrap_or(0.0);
    ProbPair::new(p0, p1)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("reply does not end in a bare 0 or 1")]
pub struct ParseFailure;

/// Strips `<think>…</think>` blocks; an unterminated block runs to the end.
pub fn strip_reasoning(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find(TRACE_OPEN) {
        out.push_str(&rest[..start]);
        let after = &rest[start + TRACE_OPEN.len()..];
        match after.find(TRACE_CLOSE) {
            Some(end) => rest = &after[end + TRACE_CLOSE.len()..],
            None => return out,
        }
    }
    out.push_str(rest);
    out
}

/// Extracts the binary answer from the final whitespace-separated token.
pub fn parse_binary_reply(text: &str) -> Result<u8, ParseFailure> {
    match strip_reasoning(text).split_whitespace().next_back() {
        Some("1") => Ok(1),
        Some("0") => Ok(0),
        _ => Err(ParseFailure),
    }
}

/// Everything collected for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub prompt_key: PromptKey,
    pub mode: Mode,
    /// One entry per repeat; `None` marks a reply that could not be parsed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcomes: Option<Vec<Option<u8>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob_pair: Option<ProbPair>,
    pub raw_texts: Vec<String>,
    pub reasoning_texts: Vec<Option<String>>,
}

impl SampleSet {
    /// `false` when any repeat failed to parse.
    pub fn is_complete(&self) -> bool {
        match (&self.outcomes, &self.prob_pair) {
            (Some(o), None) => o.iter().all(Option::is_some),
            (None, Some(_)) => true,
            _ => false,
        }
    }

    /// Parsed outcomes, present only for complete sampling sets.
    pub fn complete_outcomes(&self) -> Option<Vec<u8>> {
        self.outcomes
            .as_ref()
            .and_then(|o| o.iter().copied().collect::<Option<Vec<u8>>>())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest<'a> {
    pub prompt_key: &'a PromptKey,
    pub system: &'a str,
    pub user: &'a str,
    pub temperature: f64,
    /// Number of alternatives per token when probabilities are requested.
    pub top_logprobs: Option<u32>,
    pub max_tokens: Option<u32>,
    pub sample_index: u32,
    /// 0 for the first ask, 1 for the re-ask after a parse failure.
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChatReply {
    pub content: String,
    pub reasoning: Option<String>,
    /// Per output position: alternative token → probability.
    pub token_probs: Option<Vec<BTreeMap<String, f64>>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("network error: {0}")]
    Network(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Network(_) => true,
            TransportError::Status { status, .. } => *status == 429 || *status >= 500,
            TransportError::Protocol(_) => false,
        }
    }
}

/// One chat-completion round trip.
pub trait Transport: Send + Sync {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<ChatReply, TransportError>;

    /// `true` when the transport never touches the network.
    fn is_offline(&self) -> bool {
        false
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("{0}")]
    Config(String),
    #[error("request failed after {attempts} attempt(s): {source}")]
    Exhausted {
        attempts: u32,
        #[source]
        source: TransportError,
    },
    #[error("endpoint protocol error: {0}")]
    Protocol(String),
    #[error("cache: {0}")]
    Cache(#[from] std::io::Error),
}

/// Builds the transport a backend configuration asks for.
pub fn transport_for(cfg: &BackendConfig) -> Result<Box<dyn Transport>, BackendError> {
    cfg.validate()?;
    if cfg.mode == Mode::Mock || cfg.endpoint_url.starts_with(mock::MOCK_SCHEME) {
        Ok(Box::new(MockTransport::new(cfg.seed)))
    } else {
        Ok(Box::new(HttpTransport::new(cfg)?))
    }
}

/// Per-call bookkeeping for [`collect_samples`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CollectCounters {
    pub requests: u64,
    pub cached_samples: u64,
}

fn send_with_retries(
    transport: &dyn Transport,
    cfg: &BackendConfig,
    request: &ChatRequest<'_>,
    counters: &mut CollectCounters,
) -> Result<ChatReply, BackendError> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        counters.requests += 1;
        match transport.complete(request) {
            Ok(reply) => return Ok(reply),
            Err(e) if e.is_retryable() && attempts <= cfg.retry_budget => {
                let wait = cfg.backoff(attempts - 1);
                log::warn!(
                    "{}: {} (retry {attempts}/{} in {wait:?})",
                    cfg.backend_id,
                    e,
                    cfg.retry_budget
                );
                std::thread::sleep(wait);
            }
            Err(TransportError::Protocol(m)) => return Err(BackendError::Protocol(m)),
            Err(source) => return Err(BackendError::Exhausted { attempts, source }),
        }
    }
}

/// Collects every repeat for one prompt, reading and writing through `cache`.
pub fn collect_samples(
    instance: &PromptInstance,
    cfg: &BackendConfig,
    transport: &dyn Transport,
    cache: &SampleCache,
) -> Result<(SampleSet, CollectCounters), BackendError> {
    let mut counters = CollectCounters::default();
    let set = collect_counted(instance, cfg, transport, cache, &mut counters)?;
    Ok((set, counters))
}

pub(crate) fn collect_counted(
    instance: &PromptInstance,
    cfg: &BackendConfig,
    transport: &dyn Transport,
    cache: &SampleCache,
    counters: &mut CollectCounters,
) -> Result<SampleSet, BackendError> {
    let repeats = cfg.effective_repeats();
    let mut samples = Vec::with_capacity(repeats as usize);
    for index in 0..repeats {
        if let Some(hit) = cache.read(cfg, &instance.prompt_key, index)? {
            if hit.mode == cfg.mode {
                counters.cached_samples += 1;
                samples.push(hit);
                continue;
            }
        }
        let sample = match cfg.mode {
            Mode::Sampling | Mode::Mock => {
                fetch_binary_sample(instance, cfg, transport, index, counters)?
            }
            Mode::Logprob => fetch_prob_sample(instance, cfg, transport, index, counters)?,
        };
        cache.write(&sample)?;
        samples.push(sample);
    }
    Ok(assemble(instance, cfg.mode, samples))
}

fn request_for<'a>(
    instance: &'a PromptInstance,
    cfg: &BackendConfig,
    index: u32,
    attempt: u32,
    with_probs: bool,
) -> ChatRequest<'a> {
    ChatRequest {
        prompt_key: &instance.prompt_key,
        system: &instance.system_text,
        user: &instance.user_text,
        temperature: cfg.temperature,
        top_logprobs: with_probs.then_some(cfg.top_logprobs),
        max_tokens: cfg.max_tokens,
        sample_index: index,
        attempt,
    }
}

fn fetch_binary_sample(
    instance: &PromptInstance,
    cfg: &BackendConfig,
    transport: &dyn Transport,
    index: u32,
    counters: &mut CollectCounters,
) -> Result<CachedSample, BackendError> {
    let mut reply = send_with_retries(transport, cfg, &request_for(instance, cfg, index, 0, false), counters)?;
    let mut outcome = parse_binary_reply(&reply.content).ok();
    if outcome.is_none() {
        log::debug!("{}: re-asking {} #{index}", cfg.backend_id, instance.prompt_key);
        reply = send_with_retries(transport, cfg, &request_for(instance, cfg, index, 1, false), counters)?;
        outcome = parse_binary_reply(&reply.content).ok();
    }
    Ok(CachedSample {
        backend_id: cfg.backend_id.clone(),
        model_name: cfg.model_name.clone(),
        prompt_key: instance.prompt_key.clone(),
        index,
        mode: cfg.mode,
        outcome,
        prob_pair: None,
        raw_text: reply.content,
        reasoning: reply.reasoning,
    })
}

fn fetch_prob_sample(
    instance: &PromptInstance,
    cfg: &BackendConfig,
    transport: &dyn Transport,
    index: u32,
    counters: &mut CollectCounters,
) -> Result<CachedSample, BackendError> {
    let reply = send_with_retries(transport, cfg, &request_for(instance, cfg, index, 0, true), counters)?;
    let positions = reply
        .token_probs
        .as_deref()
        .ok_or_else(|| BackendError::Protocol("reply carries no token probabilities".into()))?;
    let pair = extract_prob_pair(&answer_distribution(positions));
    Ok(CachedSample {
        backend_id: cfg.backend_id.clone(),
        model_name: cfg.model_name.clone(),
        prompt_key: instance.prompt_key.clone(),
        index,
        mode: cfg.mode,
        outcome: None,
        prob_pair: Some(pair),
        raw_text: reply.content,
        reasoning: reply.reasoning,
    })
}

fn assemble(instance: &PromptInstance, mode: Mode, samples: Vec<CachedSample>) -> SampleSet {
    let (outcomes, prob_pair) = match mode {
        Mode::Logprob => (None, samples.first().and_then(|s| s.prob_pair)),
        _ => (Some(samples.iter().map(|s| s.outcome).collect()), None),
    };
    SampleSet {
        prompt_key: instance.prompt_key.clone(),
        mode,
        outcomes,
        prob_pair,
        raw_texts: samples.iter().map(|s| s.raw_text.clone()).collect(),
        reasoning_texts: samples.into_iter().map(|s| s.reasoning).collect(),
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
