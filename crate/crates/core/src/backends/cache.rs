use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{BackendConfig, Mode, ProbPair};
use crate::personas::PromptKey;

/// One cached model reply, stored as
/// `<root>/<backend_id>/<model>/<key[..2]>/<key>/<index>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedSample {
    pub backend_id: String,
    pub model_name: String,
    pub prompt_key: PromptKey,
    pub index: u32,
    pub mode: Mode,
    pub outcome: Option<u8>,
    pub prob_pair: Option<ProbPair>,
    pub raw_text: String,
    pub reasoning: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SampleCache {
    root: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect::<String>()
        .trim_start_matches('.')
        .to_owned()
}

impl SampleCache {
    pub fn new(root: impl Into<PathBuf>) -> SampleCache {
        SampleCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, backend_id: &str, model_name: &str, key: &PromptKey, index: u32) -> PathBuf {
        let k = key.as_str();
        self.root
            .join(slug(backend_id))
            .join(slug(model_name))
            .join(&k[..2.min(k.len())])
            .join(k)
            .join(format!("{index}.json"))
    }

    /// Returns `None` on a miss or when the stored entry belongs to another
    /// model or key.
    pub fn read(&self, cfg: &BackendConfig, key: &PromptKey, index: u32) -> io::Result<Option<CachedSample>> {
        let path = self.path_for(&cfg.backend_id, &cfg.model_name, key, index);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        let mut sample: CachedSample = match serde_json::from_slice(&bytes) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {}: {e}", path.display());
                return Ok(None);
            }
        };
        if sample.backend_id != cfg.backend_id
            || sample.model_name != cfg.model_name
            || &sample.prompt_key != key
            || sample.index != index
        {
            return Ok(None);
        }
        sample.prob_pair = sample.prob_pair.map(|p| ProbPair::new(p.p0, p.p1));
        Ok(Some(sample))
    }

    /// Atomic write: concurrent writers of the same key leave one complete file.
    pub fn write(&self, sample: &CachedSample) -> io::Result<()> {
        let path = self.path_for(&sample.backend_id, &sample.model_name, &sample.prompt_key, sample.index);
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(
            ".{}.{}.{}.tmp",
            sample.index,
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let mut body = serde_json::to_vec_pretty(sample).map_err(io::Error::other)?;
        body.push(b'\n');
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&body)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(outcome: Option<u8>, pair: Option<ProbPair>) -> CachedSample {
        CachedSample {
            backend_id: "b".into(),
            model_name: "org/model v1".into(),
            prompt_key: PromptKey::of("s", "u"),
            index: 3,
            mode: if pair.is_some() { Mode::Logprob } else { Mode::Sampling },
            outcome,
            prob_pair: pair,
            raw_text: "Final: 1".into(),
            reasoning: Some("thinking…".into()),
        }
    }

    fn cfg() -> BackendConfig {
        let mut c = BackendConfig::mock("b", 0);
        c.model_name = "org/model v1".into();
        c
    }

    #[test]
    fn miss_then_hit() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SampleCache::new(dir.path());
        let s = sample(Some(1), None);
        assert_eq!(cache.read(&cfg(), &s.prompt_key, 3).unwrap(), None);
        cache.write(&s).unwrap();
        assert_eq!(cache.read(&cfg(), &s.prompt_key, 3).unwrap(), Some(s.clone()));
        let p = cache.path_for("b", "org/model v1", &s.prompt_key, 3);
        assert!(p.ends_with(format!("b/org_model_v1/{}/{}/3.json", &s.prompt_key.as_str()[..2], s.prompt_key)));
    }

    #[test]
    fn other_model_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SampleCache::new(dir.path());
        let s = sample(Some(0), None);
        cache.write(&s).unwrap();
        let mut other = cfg();
        other.model_name = "org_model_v1".into();
        assert_eq!(cache.read(&other, &s.prompt_key, 3).unwrap(), None);
    }

    #[test]
    fn corrupt_entry_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SampleCache::new(dir.path());
        let s = sample(None, None);
        let p = cache.path_for("b", "org/model v1", &s.prompt_key, 3);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(&p, b"{not json").unwrap();
        assert_eq!(cache.read(&cfg(), &s.prompt_key, 3).unwrap(), None);
    }

    proptest! {
        #[test]
        fn round_trip(outcome in proptest::option::of(0u8..=1), p0 in 0.0f64..=1.0, p1 in 0.0f64..=1.0, logprob: bool) {
            let dir = tempfile::tempdir().unwrap();
            let cache = SampleCache::new(dir.path());
            let s = if logprob { sample(None, Some(ProbPair::new(p0, p1))) } else { sample(outcome, None) };
            cache.write(&s).unwrap();
            prop_assert_eq!(cache.read(&cfg(), &s.prompt_key, 3).unwrap(), Some(s));
        }
    }
}
