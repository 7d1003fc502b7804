//! Chat-completion client for OpenAI-compatible endpoints.
//!
//! Request body:
//!
//! ```json
//! {"model": "...", "messages": [{"role": "system", "content": "..."},
//!                               {"role": "user", "content": "..."}],
//!  "temperature": 1.0,
//!  "logprobs": true, "top_logprobs": 5,      // logprob mode only
//!  "max_tokens": 1}                          // when configured
//! ```
//!
//! From the response only `choices[0]` is read: `message.content`,
//! `message.reasoning_content` (or `message.reasoning`), and
//! `logprobs.content[*].{token, logprob, top_logprobs[*].{token, logprob}}`.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{BackendConfig, BackendError, ChatReply, ChatRequest, Transport, TransportError};

/// Environment variable consulted when a backend names none.
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
}

impl std::fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpTransport")
            .field("url", &self.url)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpTransport {
    pub fn new(cfg: &BackendConfig) -> Result<HttpTransport, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs.max(1)))
            .build()
            .map_err(|e| BackendError::Config(format!("HTTP client: {e}")))?;
        let env = cfg.api_key_env.as_deref().unwrap_or(DEFAULT_API_KEY_ENV);
        let api_key = std::env::var(env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::info!("{}: {env} not set, sending unauthenticated requests", cfg.backend_id);
        }
        Ok(HttpTransport {
            client,
            url: cfg.endpoint_url.clone(),
            model: cfg.model_name.clone(),
            api_key,
        })
    }

    pub fn request_body(&self, request: &ChatRequest<'_>) -> Value {
        request_body(&self.model, request)
    }
}

pub(crate) fn request_body(model: &str, request: &ChatRequest<'_>) -> Value {
    let mut body = json!({
        "model": model,
        "messages": [
            {"role": "system", "content": request.system},
            {"role": "user", "content": request.user},
        ],
        "temperature": request.temperature,
    });
    if let Some(n) = request.top_logprobs {
        body["logprobs"] = json!(true);
        body["top_logprobs"] = json!(n);
    }
    if let Some(n) = request.max_tokens {
        body["max_tokens"] = json!(n);
    }
    body
}

#[derive(Deserialize)]
struct Response {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    logprobs: Option<LogprobBlock>,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    reasoning_content: Option<String>,
    #[serde(default)]
    reasoning: Option<String>,
}

#[derive(Deserialize)]
struct LogprobBlock {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Deserialize)]
struct TokenLogprob {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<Alternative>,
}

#[derive(Deserialize)]
struct Alternative {
    token: String,
    logprob: f64,
}

pub(crate) fn parse_response(bytes: &[u8]) -> Result<ChatReply, TransportError> {
    let resp: Response = serde_json::from_slice(bytes)
        .map_err(|e| TransportError::Protocol(format!("unexpected response body: {e}")))?;
    let choice = resp
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| TransportError::Protocol("response has no choices".into()))?;
    let token_probs = choice.logprobs.and_then(|b| b.content).map(|positions| {
        positions
            .into_iter()
            .map(|pos| {
                let mut alts = BTreeMap::new();
                for (token, logprob) in std::iter::once((pos.token, pos.logprob))
                    .chain(pos.top_logprobs.into_iter().map(|a| (a.token, a.logprob)))
                {
                    alts.entry(token).or_insert_with(|| logprob.exp());
                }
                alts
            })
            .collect()
    });
    Ok(ChatReply {
        content: choice.message.content.unwrap_or_default(),
        reasoning: choice.message.reasoning_content.or(choice.message.reasoning),
        token_probs,
    })
}

/// Alternatives at the answer position: the first output position offering
/// "0" or "1". Tokens are whitespace-trimmed and merged by summing.
pub fn answer_distribution(positions: &[BTreeMap<String, f64>]) -> BTreeMap<String, f64> {
    let merged = |pos: &BTreeMap<String, f64>| {
        let mut out: BTreeMap<String, f64> = BTreeMap::new();
        for (token, p) in pos {
            *out.entry(token.trim().to_owned()).or_insert(0.0) += p;
        }
        out
    };
    positions
        .iter()
        .map(merged)
        .find(|m| m.contains_key("0") || m.contains_key("1"))
        .unwrap_or_default()
}

impl Transport for HttpTransport {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<ChatReply, TransportError> {
        let mut builder = self.client.post(&self.url).json(&self.request_body(request));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder
            .send()
            .map_err(|e| TransportError::Network(e.without_url().to_string()))?;
        let status = resp.status();
        let bytes = resp
            .bytes()
            .map_err(|e| TransportError::Network(e.without_url().to_string()))?;
        if !status.is_success() {
            let body = String::from_utf8_lossy(&bytes).chars().take(500).collect();
            return Err(TransportError::Status {
                status: status.as_u16(),
                body,
            });
        }
        parse_response(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::personas::PromptKey;

    #[test]
    fn body_layout() {
        let key = PromptKey::of("s", "u");
        let req = ChatRequest {
            prompt_key: &key,
            system: "sys",
            user: "usr",
            temperature: 0.6,
            top_logprobs: Some(5),
            max_tokens: Some(1),
            sample_index: 0,
            attempt: 0,
        };
        let body = request_body("m", &req);
        assert_eq!(
            body,
            json!({
                "model": "m",
                "messages": [{"role": "system", "content": "sys"}, {"role": "user", "content": "usr"}],
                "temperature": 0.6, "logprobs": true, "top_logprobs": 5, "max_tokens": 1
            })
        );
        let plain = request_body("m", &ChatRequest { top_logprobs: None, max_tokens: None, ..req });
        assert!(plain.get("logprobs").is_none());
        assert!(plain.get("max_tokens").is_none());
    }

    #[test]
    fn parses_content_and_reasoning() {
        let body = br#"{"choices":[{"message":{"role":"assistant","content":"1","reasoning_content":"hmm"}}]}"#;
        let r = parse_response(body).unwrap();
        assert_eq!(r.content, "1");
        assert_eq!(r.reasoning.as_deref(), Some("hmm"));
        assert!(r.token_probs.is_none());
    }

    #[test]
    fn parses_logprobs() {
        let body = br#"{"choices":[{"message":{"content":"1"},"logprobs":{"content":[
            {"token":"1","logprob":-0.35667494393873245,"top_logprobs":[
                {"token":"1","logprob":-0.35667494393873245},
                {"token":"0","logprob":-1.2039728043259361},
                {"token":" 0","logprob":-6.907755278982137}]}]}}]}"#;
        let r = parse_response(body).unwrap();
        let positions = r.token_probs.unwrap();
        let dist = answer_distribution(&positions);
        assert!((dist["1"] - 0.7).abs() < 1e-12);
        assert!((dist["0"] - 0.301).abs() < 1e-9);
    }

    #[test]
    fn answer_position_skips_preamble() {
        let pos = |pairs: &[(&str, f64)]| pairs.iter().map(|(t, p)| (t.to_string(), *p)).collect::<BTreeMap<_, _>>();
        let positions = vec![pos(&[("Answer", 0.9), (":", 0.1)]), pos(&[(" 0", 0.8), ("1", 0.2)])];
        let d = answer_distribution(&positions);
        assert_eq!(d["0"], 0.8);
        assert_eq!(d["1"], 0.2);
        assert!(answer_distribution(&[pos(&[("x", 1.0)])]).is_empty());
    }

    #[test]
    fn rejects_bad_bodies() {
        assert!(matches!(parse_response(b"not json"), Err(TransportError::Protocol(_))));
        assert!(matches!(parse_response(br#"{"choices":[]}"#), Err(TransportError::Protocol(_))));
    }
}
