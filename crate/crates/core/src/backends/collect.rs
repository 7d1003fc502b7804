use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{collect_counted, BackendConfig, CollectCounters, SampleCache, SampleSet, Transport};
use crate::personas::{Condition, PromptInstance, PromptKey};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub tweet_id: String,
    pub condition: Condition,
    pub prompt_key: PromptKey,
    pub error: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionStats {
    /// Distinct prompts processed.
    pub instances: u64,
    /// Prompts answered entirely from the cache.
    pub cache_hits: u64,
    /// Prompts that needed at least one request.
    pub requested: u64,
    /// Transport calls including retries and re-asks.
    pub transport_calls: u64,
    pub failures: u64,
}

#[derive(Debug, Clone, Default)]
pub struct CollectionOutcome {
    pub results: BTreeMap<PromptKey, SampleSet>,
    pub failures: Vec<FailureRecord>,
    pub stats: CollectionStats,
}

/// Collects samples for every distinct prompt with at most
/// `cfg.max_parallel` prompts in flight. Failures are reported, never
/// dropped; completed samples are already on disk when this returns.
pub fn run_collection(
    instances: &[PromptInstance],
    cfg: &BackendConfig,
    transport: &dyn Transport,
    cache: &SampleCache,
) -> CollectionOutcome {
    let mut seen = BTreeSet::new();
    let unique: Vec<&PromptInstance> = instances
        .iter()
        .filter(|i| seen.insert(i.prompt_key.clone()))
        .collect();

    let next = AtomicUsize::new(0);
    let done = Mutex::new(Vec::with_capacity(unique.len()));
    let workers = cfg.max_parallel.max(1).min(unique.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(instance) = unique.get(i) else { break };
                let mut counters = CollectCounters::default();
                let result = collect_counted(instance, cfg, transport, cache, &mut counters);
                done.lock().expect("collector poisoned").push((i, counters, result));
            });
        }
    });

    let mut done = done.into_inner().expect("collector poisoned");
    done.sort_by_key(|(i, _, _)| *i);

    let mut outcome = CollectionOutcome::default();
    outcome.stats.instances = unique.len() as u64;
    for (i, counters, result) in done {
        let instance = unique[i];
        outcome.stats.transport_calls += counters.requests;
        match result {
            Ok(set) => {
                if counters.requests == 0 {
                    outcome.stats.cache_hits += 1;
                } else {
                    outcome.stats.requested += 1;
                }
                outcome.results.insert(set.prompt_key.clone(), set);
            }
            Err(e) => {
                outcome.stats.requested += 1;
                outcome.stats.failures += 1;
                outcome.failures.push(FailureRecord {
                    tweet_id: instance.tweet_id.clone(),
                    condition: instance.condition,
                    prompt_key: instance.prompt_key.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{ChatReply, ChatRequest, Mode, MockTransport, TransportError};
    use crate::personas::Condition;
    use std::sync::atomic::AtomicU64;

    fn instances(n: usize) -> Vec<PromptInstance> {
        (0..n)
            .map(|i| {
                let user = format!("tweet {i}");
                PromptInstance {
                    tweet_id: format!("t{i}"),
                    condition: Condition::from_index(i % 12),
                    system_text: "s".into(),
                    prompt_key: PromptKey::of("s", &user),
                    user_text: user,
                }
            })
            .collect()
    }

    struct Counting<T> {
        inner: T,
        calls: AtomicU64,
        in_flight: AtomicUsize,
        peak: AtomicUsize,
    }

    impl<T: Transport> Counting<T> {
        fn new(inner: T) -> Self {
            Counting { inner, calls: AtomicU64::new(0), in_flight: AtomicUsize::new(0), peak: AtomicUsize::new(0) }
        }
    }

    impl<T: Transport> Transport for Counting<T> {
        fn complete(&self, r: &ChatRequest<'_>) -> Result<ChatReply, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(1));
            let out = self.inner.complete(r);
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            out
        }
    }

    struct AlwaysDown;
    impl Transport for AlwaysDown {
        fn complete(&self, _: &ChatRequest<'_>) -> Result<ChatReply, TransportError> {
            Err(TransportError::Status { status: 503, body: "down".into() })
        }
    }

    #[test]
    fn resumes_without_requerying() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SampleCache::new(dir.path());
        let cfg = BackendConfig::mock("m", 42);
        let all = instances(200);
        let t = Counting::new(MockTransport::new(42));
        let first = run_collection(&all[..100], &cfg, &t, &cache);
        assert_eq!(first.stats.requested, 100);
        let second = run_collection(&all, &cfg, &t, &cache);
        assert_eq!(second.stats.requested, 100);
        assert_eq!(second.stats.cache_hits, 100);
        assert_eq!(second.results.len(), 200);

        let fresh = tempfile::tempdir().unwrap();
        let uninterrupted = run_collection(&all, &cfg, &MockTransport::new(42), &SampleCache::new(fresh.path()));
        assert_eq!(uninterrupted.results, second.results);
    }

    #[test]
    fn respects_parallelism_bound() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = BackendConfig::mock("m", 1);
        cfg.max_parallel = 3;
        let t = Counting::new(MockTransport::new(1));
        let out = run_collection(&instances(60), &cfg, &t, &SampleCache::new(dir.path()));
        assert_eq!(out.results.len(), 60);
        assert!(t.peak.load(Ordering::SeqCst) <= 3);
        assert_eq!(out.stats.transport_calls, t.calls.load(Ordering::SeqCst));
    }

    #[test]
    fn total_failure_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = BackendConfig::mock("m", 1);
        cfg.mode = Mode::Sampling;
        cfg.endpoint_url = "http://unused".into();
        cfg.retry_budget = 2;
        let out = run_collection(&instances(25), &cfg, &AlwaysDown, &SampleCache::new(dir.path()));
        assert!(out.results.is_empty());
        assert_eq!(out.failures.len(), 25);
        assert!(out.failures[0].error.contains("3 attempt"));
        assert_eq!(out.stats.transport_calls, 75);
    }

    #[test]
    fn empty_input() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_collection(&[], &BackendConfig::mock("m", 1), &MockTransport::new(1), &SampleCache::new(dir.path()));
        assert!(out.results.is_empty() && out.failures.is_empty());
    }
}
