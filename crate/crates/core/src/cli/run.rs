use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::analysis::{
    all_agreements, binary_correlation, build_correlation_matrix, build_label_matrix,
    confidence_profile, cross_language_intersections, metric_report, script_breakdown,
    ConfidenceProfile, CorrelationMatrix, Intersections, LabelMatrix, ScriptBreakdown,
    ScriptClass,
};
use crate::backends::{
    run_collection, transport_for, BackendConfig, CollectionOutcome, FailureRecord, Mode,
    ProbPair, SampleCache,
};
use crate::corpus::{Corpus, Language};
use crate::personas::{enumerate_instances, Condition, PoliticalGroup, PromptInstance};
use crate::stats::{CiConfig, EstimateRecord, EstimateStatus};

use super::config::{validate_config, AnalysisSettings, CiSettings, RunConfig};
use super::report::{cmd_report, MetricsFile};
use super::{csv_bytes, fixed, write_file, write_json, CliError};

pub const SCHEMA_VERSION: u32 = 1;
const LATEST: &str = "latest";

/// Source of run timestamps. A fixed clock makes run directories
/// reproducible byte for byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    System,
    Fixed(i64),
}

impl Clock {
    /// Honors `SOURCE_DATE_EPOCH` when set.
    pub fn from_env() -> Clock {
        std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .map_or(Clock::System, Clock::Fixed)
    }

    fn now(self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Fixed(secs) => DateTime::from_timestamp(secs, 0).unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config_path: PathBuf,
    /// Backend ids to run; empty runs all.
    pub backends: Vec<String>,
    pub resume: bool,
    pub seed: Option<u64>,
    /// Replaces the configured output directory.
    pub output: Option<PathBuf>,
    pub clock: Clock,
}

impl RunOptions {
    pub fn new(config_path: impl Into<PathBuf>) -> RunOptions {
        RunOptions {
            config_path: config_path.into(),
            ..RunOptions::default()
        }
    }
}

/// Everything that determines a run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub corpus: PathBuf,
    pub corpus_sha256: String,
    pub personas: PathBuf,
    pub personas_sha256: String,
    pub ci: CiSettings,
    pub analysis: AnalysisSettings,
    pub backends: Vec<BackendConfig>,
}

impl ConfigSnapshot {
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("snapshot serializes");
        hex::encode(Sha256::digest(bytes))[..12].to_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendSummary {
    pub id: String,
    pub model: String,
    pub mode: Mode,
    /// Distinct prompts.
    pub instances: u64,
    /// Prompts that needed at least one request this invocation.
    pub requested: u64,
    pub cache_hits: u64,
    pub transport_calls: u64,
    pub failures: u64,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub records: usize,
    pub included: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub harness_version: String,
    pub config_hash: String,
    pub started_at: String,
    pub finished_at: String,
    pub complete: bool,
    pub corpus: CorpusSummary,
    pub prompt_instances: usize,
    pub backends: Vec<BackendSummary>,
    pub config: ConfigSnapshot,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Latest existing run directory for `hash`, by name.
fn latest_run_for(output: &Path, hash: &str) -> Option<PathBuf> {
    let prefix = format!("{hash}-");
    std::fs::read_dir(output)
        .ok()?
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_ok_and(|t| t.is_dir()))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with(&prefix))
        .max()
        .map(|n| output.join(n))
}

fn point_latest(output: &Path, run_dir: &Path) -> Result<(), CliError> {
    let link = output.join(LATEST);
    let name = run_dir.file_name().expect("run dir has a name");
    if std::fs::symlink_metadata(&link).is_ok() {
        std::fs::remove_file(&link).map_err(|e| CliError::io(&link, e))?;
    }
    #[cfg(unix)]
    {
        std::os::unix::fs::symlink(name, &link).map_err(|e| CliError::io(&link, e))
    }
    #[cfg(not(unix))]
    {
        write_file(&link, name.to_string_lossy().as_bytes())
    }
}

pub fn cmd_run(opts: &RunOptions) -> Result<RunSummary, CliError> {
    let mut cfg = RunConfig::load(&opts.config_path)?;
    cfg.select_backends(&opts.backends)?;
    if let Some(seed) = opts.seed {
        cfg.override_seed(seed);
    }
    if let Some(out) = &opts.output {
        let cwd = std::env::current_dir().map_err(|e| CliError::io(Path::new("."), e))?;
        cfg.output_dir = cwd.join(out);
    }

    let mut report = validate_config(&cfg);
    if !report.is_valid() {
        return Err(CliError::Invalid(report.issues));
    }
    let corpus = report.corpus.take().expect("validated corpus");
    let personas = report.personas.take().expect("validated personas");
    let instances = enumerate_instances(&corpus, &personas)?;
    let ci = cfg.ci.to_config()?;

    let snapshot = ConfigSnapshot {
        corpus: cfg.corpus.clone(),
        corpus_sha256: sha256_file(&cfg.corpus_path())?,
        personas: cfg.personas.clone(),
        personas_sha256: sha256_file(&cfg.personas_path())?,
        ci: cfg.ci,
        analysis: cfg.analysis,
        backends: cfg.backends.iter().map(|b| cfg.effective_backend(b)).collect(),
    };
    let hash = snapshot.hash();
    let started = opts.clock.now();
    let output = cfg.output_path();

    let run_dir = match opts.resume.then(|| latest_run_for(&output, &hash)).flatten() {
        Some(dir) => {
            log::info!("resuming {}", dir.display());
            dir
        }
        None => {
            let dir = output.join(format!("{hash}-{}", started.format("%Y%m%dT%H%M%SZ")));
            if dir.exists() && !opts.resume {
                return Err(CliError::RunExists(dir));
            }
            dir
        }
    };
    std::fs::create_dir_all(&run_dir).map_err(|e| CliError::io(&run_dir, e))?;
    write_json(&run_dir.join("config.json"), &snapshot)?;

    let cache = SampleCache::new(run_dir.join("cache"));
    let mut summaries = Vec::new();
    for backend in &snapshot.backends {
        log::info!(
            "{}: collecting {} prompts ({} mode)",
            backend.backend_id,
            instances.len(),
            backend.mode
        );
        let transport = transport_for(backend)?;
        let outcome = run_collection(&instances, backend, transport.as_ref(), &cache);
        let stats = outcome.stats;
        if stats.failures > 0 {
            log::warn!("{}: {} prompt(s) failed", backend.backend_id, stats.failures);
        }
        let backend_ci = ci.with_repeats(backend.effective_repeats())?;
        let dir = run_dir.join("backends").join(&backend.backend_id);
        write_backend_outputs(&dir, backend, &backend_ci, &cfg.analysis, &corpus, &instances, &outcome)?;
        summaries.push(BackendSummary {
            id: backend.backend_id.clone(),
            model: backend.model_name.clone(),
            mode: backend.mode,
            instances: stats.instances,
            requested: stats.requested,
            cache_hits: stats.cache_hits,
            transport_calls: stats.transport_calls,
            failures: stats.failures,
            complete: stats.failures == 0,
        });
    }

    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        harness_version: env!("CARGO_PKG_VERSION").to_owned(),
        config_hash: hash,
        started_at: started.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        finished_at: opts.clock.now().format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        complete: summaries.iter().all(|s| s.complete),
        corpus: CorpusSummary {
            records: corpus.len(),
            included: corpus.included_count(),
            excluded: corpus.excluded_count(),
        },
        prompt_instances: instances.len(),
        backends: summaries,
        config: snapshot,
    };
    write_json(&run_dir.join("manifest.json"), &manifest)?;
    cmd_report(&run_dir, &run_dir.join("report"))?;
    point_latest(&output, &run_dir)?;
    Ok(RunSummary { run_dir, manifest })
}

/// One estimate per instance, in instance order.
pub(crate) fn estimates_for(
    instances: &[PromptInstance],
    outcome: &CollectionOutcome,
    ci: &CiConfig,
) -> Vec<EstimateRecord> {
    instances
        .iter()
        .map(|inst| {
            let Some(set) = outcome.results.get(&inst.prompt_key) else {
                return EstimateRecord::invalid(&inst.tweet_id, inst.condition);
            };
            if let Some(pair) = &set.prob_pair {
                return EstimateRecord::from_prob_pair(&inst.tweet_id, inst.condition, pair);
            }
            set.complete_outcomes()
                .and_then(|o| EstimateRecord::from_outcomes(&inst.tweet_id, inst.condition, &o, ci).ok())
                .unwrap_or_else(|| EstimateRecord::invalid(&inst.tweet_id, inst.condition))
        })
        .collect()
}

fn write_backend_outputs(
    dir: &Path,
    backend: &BackendConfig,
    ci: &CiConfig,
    analysis: &AnalysisSettings,
    corpus: &Corpus,
    instances: &[PromptInstance],
    outcome: &CollectionOutcome,
) -> Result<(), CliError> {
    let estimates = estimates_for(instances, outcome, ci);
    write_file(&dir.join("estimates.csv"), estimates_csv(&estimates))?;

    let labels = build_label_matrix(&estimates, corpus)?;
    write_file(&dir.join("labels.csv"), labels_csv(&labels))?;

    let cm = build_correlation_matrix(&labels, analysis.deletion);
    write_file(&dir.join("correlation.csv"), correlation_csv(&cm))?;
    write_file(&dir.join("correlation_support.csv"), support_csv(&cm))?;

    let groups: Vec<Intersections> = PoliticalGroup::ALL
        .iter()
        .map(|&g| cross_language_intersections(&labels, g))
        .collect();
    write_file(&dir.join("upset.csv"), upset_csv(&groups))?;
    write_file(&dir.join("agreement.csv"), agreement_csv(&labels))?;

    let report = metric_report(&estimates, &cm, analysis.clc_diagonal);
    let count = |s: EstimateStatus| estimates.iter().filter(|e| e.status == s).count();
    let metrics = MetricsFile {
        backend_id: backend.backend_id.clone(),
        model: backend.model_name.clone(),
        mode: Some(backend.mode),
        valid_pct: report.valid_pct,
        clc: report.clc,
        igd: report.igd,
        deletion: Some(analysis.deletion),
        clc_diagonal: Some(analysis.clc_diagonal),
        estimates: estimates.len(),
        confident: count(EstimateStatus::Confident),
        excluded: count(EstimateStatus::Excluded),
        invalid: count(EstimateStatus::Invalid),
        missing_cells: labels.missing_count(),
        cross_language_disagreement: groups
            .iter()
            .map(|x| (x.group.key().to_owned(), x.disagreement_rate))
            .collect(),
        complete: outcome.failures.is_empty(),
        diagnostics: report.diagnostics,
    };
    write_json(&dir.join("metrics.json"), &metrics)?;
    write_json(&dir.join("failures.json"), &outcome.failures as &[FailureRecord])?;

    if backend.mode == Mode::Logprob {
        write_json(&dir.join("confidence_profile.json"), &profile_json(instances, outcome))?;
    }
    if let Some(scripts) = scripts_json(instances, outcome) {
        write_json(&dir.join("script_breakdown.json"), &scripts)?;
    }
    Ok(())
}

fn condition_header() -> Vec<String> {
    Condition::all().iter().map(|c| c.label()).collect()
}

fn opt_label(l: Option<u8>) -> String {
    l.map(|v| v.to_string()).unwrap_or_default()
}

fn estimates_csv(estimates: &[EstimateRecord]) -> Vec<u8> {
    let rows: Vec<Vec<String>> = estimates
        .iter()
        .map(|e| {
            vec![
                e.tweet_id.clone(),
                e.condition.group.key().to_owned(),
                e.condition.language.code().to_owned(),
                fixed(e.p_hat, 6),
                fixed(e.ci_low, 6),
                fixed(e.ci_high, 6),
                e.status.as_str().to_owned(),
                opt_label(e.label),
            ]
        })
        .collect();
    csv_bytes(
        &["tweet_id", "group", "language", "p_hat", "ci_low", "ci_high", "status", "label"],
        &rows,
    )
}

fn labels_csv(m: &LabelMatrix) -> Vec<u8> {
    let mut header = vec!["tweet_id".to_owned()];
    header.extend(condition_header());
    let rows: Vec<Vec<String>> = m
        .rows
        .iter()
        .zip(&m.cells)
        .map(|(id, cells)| {
            std::iter::once(id.clone())
                .chain(cells.iter().map(|c| opt_label(*c)))
                .collect()
        })
        .collect();
    csv_bytes(&header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)
}

fn square_csv<F: Fn(usize, usize) -> String>(cell: F) -> Vec<u8> {
    let mut header = vec!["condition".to_owned()];
    header.extend(condition_header());
    let rows: Vec<Vec<String>> = Condition::all()
        .iter()
        .enumerate()
        .map(|(i, c)| std::iter::once(c.label()).chain((0..12).map(|j| cell(i, j))).collect())
        .collect();
    csv_bytes(&header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)
}

fn correlation_csv(cm: &CorrelationMatrix) -> Vec<u8> {
    square_csv(|i, j| cm.entries[i][j].map(|r| fixed(r, 6)).unwrap_or_default())
}

fn support_csv(cm: &CorrelationMatrix) -> Vec<u8> {
    square_csv(|i, j| cm.pair_support[i][j].to_string())
}

fn upset_csv(groups: &[Intersections]) -> Vec<u8> {
    let mut rows = Vec::new();
    for x in groups {
        for (pattern, count) in x.counts.iter().enumerate() {
            rows.push(vec![
                x.group.key().to_owned(),
                Intersections::pattern_label(pattern),
                ((pattern >> 2) & 1).to_string(),
                ((pattern >> 1) & 1).to_string(),
                (pattern & 1).to_string(),
                count.to_string(),
            ]);
        }
    }
    csv_bytes(&["group", "pattern", "en", "pl", "ru", "count"], &rows)
}

fn agreement_csv(m: &LabelMatrix) -> Vec<u8> {
    let rows: Vec<Vec<String>> = all_agreements(m)
        .iter()
        .map(|s| {
            let phi = binary_correlation(&m.column(s.a), &m.column(s.b)).r;
            vec![
                s.a.label(),
                s.b.label(),
                s.n_common.to_string(),
                s.both_offensive.to_string(),
                s.both_clean.to_string(),
                s.disagree_a_only.to_string(),
                s.disagree_b_only.to_string(),
                s.agreement_rate().map(|r| fixed(r, 6)).unwrap_or_default(),
                phi.map(|r| fixed(r, 6)).unwrap_or_default(),
            ]
        })
        .collect();
    csv_bytes(
        &[
            "condition_a",
            "condition_b",
            "n_common",
            "both_offensive",
            "both_clean",
            "a_only",
            "b_only",
            "agreement_rate",
            "phi",
        ],
        &rows,
    )
}

fn profile_json(instances: &[PromptInstance], outcome: &CollectionOutcome) -> serde_json::Value {
    let mut by_condition: BTreeMap<Condition, Vec<ProbPair>> = BTreeMap::new();
    for inst in instances {
        if let Some(pair) = outcome.results.get(&inst.prompt_key).and_then(|s| s.prob_pair) {
            by_condition.entry(inst.condition).or_default().push(pair);
        }
    }
    let all: Vec<ProbPair> = by_condition.values().flatten().copied().collect();
    let per: Vec<serde_json::Value> = Condition::all()
        .iter()
        .map(|c| {
            let p: ConfidenceProfile = confidence_profile(by_condition.get(c).map_or(&[][..], Vec::as_slice));
            json!({"condition": c.label(), "profile": p})
        })
        .collect();
    json!({"overall": confidence_profile(&all), "by_condition": per})
}

fn breakdown_json(b: &ScriptBreakdown) -> serde_json::Value {
    let counts: serde_json::Map<String, serde_json::Value> = ScriptClass::ALL
        .iter()
        .map(|c| (c.key().to_owned(), json!(b.counts[*c as usize])))
        .collect();
    let fractions: serde_json::Map<String, serde_json::Value> = ScriptClass::ALL
        .iter()
        .map(|c| (c.key().to_owned(), json!(b.fraction(*c))))
        .collect();
    json!({"total": b.total, "counts": counts, "fractions": fractions})
}

/// Reasoning-trace scripts by prompt language; `None` when no traces exist.
fn scripts_json(instances: &[PromptInstance], outcome: &CollectionOutcome) -> Option<serde_json::Value> {
    let mut by_lang: BTreeMap<Language, Vec<&str>> = BTreeMap::new();
    for inst in instances {
        if let Some(set) = outcome.results.get(&inst.prompt_key) {
            by_lang
                .entry(inst.condition.language)
                .or_default()
                .extend(set.reasoning_texts.iter().flatten().map(String::as_str));
        }
    }
    let all: Vec<&str> = by_lang.values().flatten().copied().collect();
    if all.is_empty() {
        return None;
    }
    let per: serde_json::Map<String, serde_json::Value> = Language::ALL
        .iter()
        .map(|l| {
            let texts = by_lang.get(l).map_or(&[][..], Vec::as_slice);
            (l.code().to_owned(), breakdown_json(&script_breakdown(texts)))
        })
        .collect();
    Some(json!({"overall": breakdown_json(&script_breakdown(&all)), "by_prompt_language": per}))
}
