use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::{ChatReply, ChatRequest, Transport, TransportError};
use crate::personas::PromptKey;

/// Endpoint prefix that routes a sampling/logprob backend to the mock.
pub(crate) const MOCK_SCHEME: &str = "mock://";

/// Chance that a single mock reply is unparseable.
const GARBLE_RATE: f64 = 0.03;

/// Deterministic offline model. Every reply is a pure function of
/// `(seed, prompt_key, sample_index, attempt)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MockTransport {
    seed: u64,
}

fn unit(seed: u64, key: &PromptKey, tags: &[u32]) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_str().as_bytes());
    for t in tags {
        h.update(t.to_le_bytes());
    }
    let digest = h.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64
}

const TAG_PROPENSITY: u32 = u32::MAX;
const TAG_GARBLE: u32 = u32::MAX - 1;
const TAG_LEAK: u32 = u32::MAX - 2;

impl MockTransport {
    pub fn new(seed: u64) -> MockTransport {
        MockTransport { seed }
    }

    /// Latent probability that the mock answers "1" for this prompt.
    /// Mostly near 0 or 1, with a band of uncertain prompts.
    pub fn propensity(&self, key: &PromptKey) -> f64 {
        let u = unit(self.seed, key, &[TAG_PROPENSITY]);
        if u < 0.4 {
            0.04 + u * 0.1
        } else if u < 0.8 {
            0.92 + (u - 0.4) * 0.1
        } else {
            (u - 0.8) * 5.0
        }
    }

    /// The binary answer the mock gives for sample `index`.
    pub fn outcome(&self, key: &PromptKey, index: u32) -> u8 {
        u8::from(unit(self.seed, key, &[index]) < self.propensity(key))
    }

    fn garbled(&self, key: &PromptKey, index: u32, attempt: u32) -> bool {
        unit(self.seed, key, &[TAG_GARBLE, index, attempt]) < GARBLE_RATE
    }
}

impl Transport for MockTransport {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<ChatReply, TransportError> {
        let key = request.prompt_key;
        let p = self.propensity(key);
        if request.top_logprobs.is_some() {
            // Most replies leak a sliver of mass to other tokens; a few leak more.
            let leak = if unit(self.seed, key, &[TAG_LEAK]) < 0.02 { 0.03 } else { 0.002 };
            let p1 = p * (1.0 - leak);
            let p0 = (1.0 - p) * (1.0 - leak);
            let answer = if p1 >= p0 { "1" } else { "0" };
            let mut position = BTreeMap::new();
            position.insert("1".to_owned(), p1);
            position.insert("0".to_owned(), p0);
            position.insert(" yes".to_owned(), leak);
            return Ok(ChatReply {
                content: answer.to_owned(),
                reasoning: None,
                token_probs: Some(vec![position]),
            });
        }
        let index = request.sample_index;
        if self.garbled(key, index, request.attempt) {
            return Ok(ChatReply {
                content: "I would rather not classify this.".to_owned(),
                reasoning: Some("The request is ambiguous.".to_owned()),
                token_probs: None,
            });
        }
        let bit = self.outcome(key, index);
        Ok(ChatReply {
            content: format!("Final answer: {bit}"),
            reasoning: Some(format!(
                "Considering the persona's outlook, the tweet seems {}.",
                if bit == 1 { "offensive" } else { "acceptable" }
            )),
            token_probs: None,
        })
    }

    fn is_offline(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req<'a>(key: &'a PromptKey, index: u32, probs: bool) -> ChatRequest<'a> {
        ChatRequest {
            prompt_key: key,
            system: "s",
            user: "u",
            temperature: 1.0,
            top_logprobs: probs.then_some(5),
            max_tokens: None,
            sample_index: index,
            attempt: 0,
        }
    }

    #[test]
    fn replies_are_pure() {
        let key = PromptKey::of("a", "b");
        let m = MockTransport::new(42);
        for i in 0..10 {
            assert_eq!(m.complete(&req(&key, i, false)), m.complete(&req(&key, i, false)));
        }
        assert_eq!(m.complete(&req(&key, 0, true)), MockTransport::new(42).complete(&req(&key, 0, true)));
    }

    #[test]
    fn seed_changes_answers() {
        let differing = (0..200)
            .filter(|i| {
                let key = PromptKey::of("x", &i.to_string());
                MockTransport::new(1).propensity(&key) != MockTransport::new(2).propensity(&key)
            })
            .count();
        assert_eq!(differing, 200);
    }

    #[test]
    fn propensity_in_unit_interval() {
        let m = MockTransport::new(7);
        for i in 0..1000 {
            let p = m.propensity(&PromptKey::of("s", &i.to_string()));
            assert!((0.0..=1.0).contains(&p));
        }
    }
}
