use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

use persona_eval::backends::{collect_samples, BackendConfig, BackendError, Mode, SampleCache};
use persona_eval::corpus::parse_corpus;
use persona_eval::personas::{enumerate_instances, load_personas};
use persona_eval::PromptInstance;

struct Captured {
    headers: Vec<String>,
    body: Value,
}

/// Serves the canned responses in order, one per connection, and records
/// each request.
fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut headers = Vec::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_owned();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut raw = vec![0; len];
            reader.read_exact(&mut raw).unwrap();
            log.lock().unwrap().push(Captured {
                headers,
                body: serde_json::from_slice(&raw).unwrap(),
            });
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen)
}

fn instance() -> PromptInstance {
    let corpus = parse_corpus(
        br#"{"tweet_id":"w1","text_en":"hello @bob","text_pl":"czesc","text_ru":"privet"}"#,
    )
    .unwrap();
    let personas =
        load_personas(concat!(env!("CARGO_MANIFEST_DIR"), "/data/demo/personas.toml")).unwrap();
    enumerate_instances(&corpus, &personas).unwrap().remove(0)
}

fn backend(url: &str, mode: Mode) -> BackendConfig {
    BackendConfig {
        backend_id: "wire".into(),
        mode,
        endpoint_url: url.into(),
        model_name: "test-model".into(),
        repeats: Some(2),
        retry_budget: 2,
        retry_backoff_ms: 1,
        timeout_secs: 10,
        api_key_env: Some("PERSONA_EVAL_WIRE_TEST_KEY".into()),
        ..BackendConfig::mock("wire", 0)
    }
}

fn content(text: &str) -> String {
    json!({"choices": [{"message": {"content": text, "reasoning_content": "hmm"}}]}).to_string()
}

#[test]
fn sampling_retries_server_errors() {
    std::env::set_var("PERSONA_EVAL_WIRE_TEST_KEY", "sk-wire");
    let (url, seen) = serve(vec![
        (503, "{}".into()),
        (200, content("1")),
        (200, content("maybe")),
        (200, content("0")),
    ]);
    let dir = tempfile::tempdir().unwrap();
    let inst = instance();
    let cfg = backend(&url, Mode::Sampling);
    let (set, counters) = collect_samples(&inst, &cfg, &*transport(&cfg), &SampleCache::new(dir.path())).unwrap();

    assert_eq!(set.outcomes, Some(vec![Some(1), Some(0)]));
    assert_eq!(set.reasoning_texts, vec![Some("hmm".into()), Some("hmm".into())]);
    assert_eq!(counters.requests, 4);

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 4);
    let body = &seen[0].body;
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][0]["content"], inst.system_text.as_str());
    assert_eq!(body["messages"][1]["content"], inst.user_text.as_str());
    assert!(body.get("logprobs").is_none());
    assert!(seen[0]
        .headers
        .iter()
        .any(|h| h.eq_ignore_ascii_case("authorization: Bearer sk-wire")));

    // a second pass is served entirely from the cache
    let (again, counters) = collect_samples(&inst, &cfg, &*transport(&cfg), &SampleCache::new(dir.path())).unwrap();
    assert_eq!(again.outcomes, set.outcomes);
    assert_eq!((counters.requests, counters.cached_samples), (0, 2));
}

#[test]
fn logprob_reply_yields_prob_pair() {
    let lp = |p: f64| p.ln();
    let body = json!({"choices": [{
        "message": {"content": "1"},
        "logprobs": {"content": [{
            "token": "1", "logprob": lp(0.7),
            "top_logprobs": [
                {"token": "1", "logprob": lp(0.7)},
                {"token": " 0", "logprob": lp(0.2)},
                {"token": "0", "logprob": lp(0.05)},
            ],
        }]},
    }]})
    .to_string();
    let (url, seen) = serve(vec![(200, body)]);
    let dir = tempfile::tempdir().unwrap();
    let cfg = BackendConfig {
        repeats: Some(1),
        ..backend(&url, Mode::Logprob)
    };
    let (set, counters) = collect_samples(&instance(), &cfg, &*transport(&cfg), &SampleCache::new(dir.path())).unwrap();

    let pair = set.prob_pair.unwrap();
    assert!((pair.p1 - 0.7).abs() < 1e-12);
    assert!((pair.p0 - 0.25).abs() < 1e-12);
    assert!(pair.deviation_flag);
    assert_eq!(counters.requests, 1);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].body["logprobs"], true);
    assert_eq!(seen[0].body["top_logprobs"], 5);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = serve(vec![(400, r#"{"error":"bad"}"#.into())]);
    let dir = tempfile::tempdir().unwrap();
    let cfg = backend(&url, Mode::Sampling);
    let err = collect_samples(&instance(), &cfg, &*transport(&cfg), &SampleCache::new(dir.path())).unwrap_err();
    assert!(matches!(err, BackendError::Exhausted { attempts: 1, .. }), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn retry_budget_is_bounded() {
    let (url, seen) = serve(vec![(503, "{}".into()), (502, "{}".into()), (429, "{}".into())]);
    let dir = tempfile::tempdir().unwrap();
    let cfg = backend(&url, Mode::Sampling);
    let err = collect_samples(&instance(), &cfg, &*transport(&cfg), &SampleCache::new(dir.path())).unwrap_err();
    assert!(matches!(err, BackendError::Exhausted { attempts: 3, .. }), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

fn transport(cfg: &BackendConfig) -> Box<dyn persona_eval::backends::Transport> {
    persona_eval::backends::transport_for(cfg).unwrap()
}
