use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_persona-eval");

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo")
}

/// Copies the demo inputs into a fresh directory, applying `edit` to each
/// file's text first.
fn workspace(edit: impl Fn(&str, String) -> String) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for name in ["corpus.jsonl", "personas.toml", "config.toml"] {
        let text = fs::read_to_string(demo().join(name)).unwrap();
        fs::write(dir.path().join(name), edit(name, text)).unwrap();
    }
    dir
}

fn run(args: &[&str], epoch: &str) -> Output {
    Command::new(BIN)
        .args(args)
        .env("SOURCE_DATE_EPOCH", epoch)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout_path(out: &Output) -> PathBuf {
    PathBuf::from(String::from_utf8_lossy(&out.stdout).trim())
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    if !root.exists() {
        return out;
    }
    for entry in fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            for (k, v) in files(&path) {
                out.insert(Path::new(path.file_name().unwrap()).join(k), v);
            }
        } else {
            out.insert(PathBuf::from(path.file_name().unwrap()), fs::read(&path).unwrap());
        }
    }
    out
}

#[test]
fn validate_accepts_demo() {
    let out = run(&["validate", "--config", demo().join("config.toml").to_str().unwrap()], "0");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn validate_reports_missing_condition() {
    let ws = workspace(|name, text| {
        if name != "personas.toml" {
            return text;
        }
        // drop the last persona table
        let cut = text.rfind("[[persona]]").unwrap();
        text[..cut].to_owned()
    });
    let cfg = ws.path().join("config.toml");
    let out = run(&["validate", "--config", cfg.to_str().unwrap()], "0");
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing persona") && err.contains("RU"), "{err}");
}

#[test]
fn validate_reports_duplicate_tweet() {
    let ws = workspace(|name, text| {
        if name == "corpus.jsonl" {
            let first = text.lines().next().unwrap().to_owned();
            format!("{text}{first}\n")
        } else {
            text
        }
    });
    let out = run(&["validate", "--config", ws.path().join("config.toml").to_str().unwrap()], "0");
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("d001"));
}

#[test]
fn report_without_artifacts_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["report", dir.path().to_str().unwrap()], "0");
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest.json"));
}

#[test]
fn report_renders_fixture_metrics() {
    let ws = workspace(|_, t| t);
    let cfg = ws.path().join("config.toml");
    let out = run(&["run", "--config", cfg.to_str().unwrap()], "1700000000");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = stdout_path(&out);
    assert_eq!(
        fs::read_link(ws.path().join("runs/latest")).unwrap(),
        PathBuf::from(run_dir.file_name().unwrap())
    );

    let metrics = run_dir.join("backends/mock/metrics.json");
    fs::write(&metrics, r#"{"valid_pct": 90.7, "clc": 3.92, "igd": 100.03}"#).unwrap();
    let dest = ws.path().join("rendered");
    let out = run(
        &["report", run_dir.to_str().unwrap(), "--output", dest.to_str().unwrap()],
        "0",
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dest.join("table.md")).unwrap();
    for cell in ["90.7", "3.92", "100.03"] {
        assert!(table.contains(cell), "{cell} missing from\n{table}");
    }
    let json: Value = serde_json::from_slice(&fs::read(dest.join("table.json")).unwrap()).unwrap();
    assert_eq!(json["mock"]["igd"], 100.03);
    assert!(dest.join("mock/heatmap.svg").exists());
    assert!(dest.join("mock/upset.vl.json").exists());
}

#[test]
fn resumed_run_matches_uninterrupted() {
    let ws = workspace(|_, t| t);
    let cfg = ws.path().join("config.toml");
    let cfg = cfg.to_str().unwrap();
    let full = ws.path().join("full");
    let cut = ws.path().join("cut");

    let a = run(&["run", "--config", cfg, "--output", full.to_str().unwrap()], "1700000000");
    assert_eq!(a.status.code(), Some(0));
    let b = run(&["run", "--config", cfg, "--output", cut.to_str().unwrap()], "1700000000");
    assert_eq!(b.status.code(), Some(0));
    let (a_dir, b_dir) = (stdout_path(&a), stdout_path(&b));

    // simulate an interrupted run: outputs gone, half the cache gone
    for sub in ["backends", "report"] {
        fs::remove_dir_all(b_dir.join(sub)).unwrap();
    }
    fs::remove_file(b_dir.join("manifest.json")).unwrap();
    let mut cached: Vec<PathBuf> = files(&b_dir.join("cache")).into_keys().collect();
    cached.truncate(cached.len() / 2);
    for rel in &cached {
        fs::remove_file(b_dir.join("cache").join(rel)).unwrap();
    }

    let r = run(&["run", "--config", cfg, "--output", cut.to_str().unwrap(), "--resume"], "1800000000");
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(stdout_path(&r), b_dir);
    for sub in ["backends", "report", "cache"] {
        let (x, y) = (files(&a_dir.join(sub)), files(&b_dir.join(sub)));
        assert!(!x.is_empty());
        assert!(x == y, "{sub}/ differs after resume");
    }
    let manifest: Value = serde_json::from_slice(&fs::read(b_dir.join("manifest.json")).unwrap()).unwrap();
    let b0 = &manifest["backends"][0];
    let (hits, requested) = (b0["cache_hits"].as_u64().unwrap(), b0["requested"].as_u64().unwrap());
    assert!(hits > 0 && requested > 0, "{b0}");
    assert_eq!(hits + requested, 240);
}

#[test]
fn rerun_without_resume_refuses_to_overwrite() {
    let ws = workspace(|_, t| t);
    let cfg = ws.path().join("config.toml");
    let first = run(&["run", "--config", cfg.to_str().unwrap()], "1700000000");
    assert_eq!(first.status.code(), Some(0));
    let again = run(&["run", "--config", cfg.to_str().unwrap()], "1700000000");
    assert_eq!(again.status.code(), Some(2));
}

#[test]
fn unreachable_backend_yields_partial_run() {
    let ws = workspace(|name, text| {
        if name != "config.toml" {
            return text;
        }
        format!(
            "{text}\n[[backend]]\nid = \"down\"\nmode = \"sampling\"\nendpoint_url = \"http://127.0.0.1:9/v1/chat/completions\"\nmodel = \"x\"\nretry_budget = 0\ntimeout_secs = 2\n"
        )
    });
    let cfg = ws.path().join("config.toml");
    let out = run(&["run", "--config", cfg.to_str().unwrap()], "1700000000");
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = stdout_path(&out);
    let failures: Value =
        serde_json::from_slice(&fs::read(run_dir.join("backends/down/failures.json")).unwrap()).unwrap();
    assert_eq!(failures.as_array().unwrap().len(), 240);
    let table = fs::read_to_string(run_dir.join("report/table.md")).unwrap();
    assert!(table.contains("down (partial)"), "{table}");
}
