//! Run configuration file.
//!
//! ```toml
//! corpus = "corpus.jsonl"          # relative to this file
//! personas = "personas.toml"
//! output_dir = "runs"
//!
//! [ci]
//! alpha = 0.10
//! repeats = 5
//!
//! [analysis]
//! deletion = "pairwise"            # or "listwise"
//! clc_diagonal = "include"         # or "exclude"
//!
//! [[backend]]
//! id = "mock"
//! mode = "mock"
//! model = "mock"
//! seed = 42
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{DeletionMode, DiagonalMode};
use crate::backends::BackendConfig;
use crate::corpus::{load_corpus, Corpus};
use crate::personas::{load_personas, PersonaRegistry};
use crate::stats::CiConfig;

use super::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CiSettings {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_repeats")]
    pub repeats: u32,
    /// Overrides the stored normal quantile for `alpha`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
}

fn default_alpha() -> f64 {
    0.10
}
fn default_repeats() -> u32 {
    5
}

impl Default for CiSettings {
    fn default() -> Self {
        CiSettings {
            alpha: default_alpha(),
            repeats: default_repeats(),
            z: None,
        }
    }
}

impl CiSettings {
    pub fn to_config(self) -> Result<CiConfig, crate::stats::StatsError> {
        match self.z {
            Some(z) => CiConfig::with_z(self.alpha, self.repeats, z),
            None => CiConfig::new(self.alpha, self.repeats),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSettings {
    #[serde(default)]
    pub deletion: DeletionMode,
    #[serde(default)]
    pub clc_diagonal: DiagonalMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub personas: PathBuf,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub ci: CiSettings,
    #[serde(default)]
    pub analysis: AnalysisSettings,
    #[serde(rename = "backend", default)]
    pub backends: Vec<BackendConfig>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig, CliError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = RunConfig::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.resolve(&self.corpus)
    }

    pub fn personas_path(&self) -> PathBuf {
        self.resolve(&self.personas)
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Keeps only the named backends, in config order.
    pub fn select_backends(&mut self, ids: &[String]) -> Result<(), CliError> {
        if ids.is_empty() {
            return Ok(());
        }
        let known: BTreeSet<&str> = self.backends.iter().map(|b| b.backend_id.as_str()).collect();
        if let Some(missing) = ids.iter().find(|id| !known.contains(id.as_str())) {
            return Err(CliError::Config(format!("no backend with id {missing:?}")));
        }
        self.backends.retain(|b| ids.contains(&b.backend_id));
        Ok(())
    }

    pub fn override_seed(&mut self, seed: u64) {
        for b in &mut self.backends {
            b.seed = seed;
        }
    }

    /// Backend config with the repeat count filled in from the CI settings.
    pub fn effective_backend(&self, b: &BackendConfig) -> BackendConfig {
        let mut b = b.clone();
        if b.mode != crate::backends::Mode::Logprob && b.repeats.is_none() {
            b.repeats = Some(self.ci.repeats);
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationIssue {
    pub location: String,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Debug, Default)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
    pub corpus: Option<Corpus>,
    pub personas: Option<PersonaRegistry>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, location: impl Into<String>, message: impl ToString) {
        self.issues.push(ValidationIssue {
            location: location.into(),
            message: message.to_string(),
        });
    }
}

/// Checks every input a run needs and collects all problems found.
pub fn validate_config(cfg: &RunConfig) -> ValidationReport {
    let mut report = ValidationReport::default();

    let corpus_path = cfg.corpus_path();
    match load_corpus(&corpus_path) {
        Ok(c) => {
            if c.included_count() == 0 {
                report.push(corpus_path.display().to_string(), "no included tweets");
            }
            report.corpus = Some(c);
        }
        Err(e) => report.push(corpus_path.display().to_string(), e),
    }

    let persona_path = cfg.personas_path();
    match load_personas(&persona_path) {
        Ok(p) => report.personas = Some(p),
        Err(e) if !e.issues().is_empty() => {
            for issue in e.issues() {
                report.push(persona_path.display().to_string(), issue);
            }
        }
        Err(e) => report.push(persona_path.display().to_string(), e),
    }

    if cfg.backends.is_empty() {
        report.push("backend", "at least one [[backend]] is required");
    }
    let mut ids = BTreeSet::new();
    for (i, b) in cfg.backends.iter().enumerate() {
        let loc = format!("backend[{i}]");
        if !ids.insert(b.backend_id.as_str()) {
            report.push(&loc, format!("duplicate backend id {:?}", b.backend_id));
        }
        if let Err(e) = cfg.effective_backend(b).validate() {
            report.push(&loc, e);
        }
    }

    if let Err(e) = cfg.ci.to_config() {
        report.push("ci", e);
    }

    let out = cfg.output_path();
    if let Err(m) = creatable_dir(&out) {
        report.push(out.display().to_string(), m);
    }
    report
}

/// `Ok` when `dir` is a directory or could be created as one.
fn creatable_dir(dir: &Path) -> Result<(), String> {
    let mut probe = Some(dir);
    while let Some(p) = probe {
        if p.exists() {
            return if p.is_dir() {
                Ok(())
            } else {
                Err(format!("{} exists and is not a directory", p.display()))
            };
        }
        probe = p.parent().filter(|q| !q.as_os_str().is_empty());
    }
    Ok(())
}
