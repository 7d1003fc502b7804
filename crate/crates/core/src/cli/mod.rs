//! Runnable surface: config validation, full runs, and report rendering.
//!
//! Run directory layout:
//!
//! ```text
//! <output_dir>/
//!   latest -> <hash>-<timestamp>
//!   <hash>-<timestamp>/
//!     config.json            effective configuration snapshot
//!     manifest.json          counts, timestamps, completion status
//!     cache/                 one JSON file per raw sample
//!     backends/<id>/         estimates.csv, labels.csv, correlation.csv,
//!                            correlation_support.csv, metrics.json,
//!                            agreement.csv, upset.csv, failures.json,
//!                            confidence_profile.json (logprob),
//!                            script_breakdown.json (when traces exist)
//!     report/                table.md, table.csv, <id>/heatmap.*, <id>/upset.*
//! ```

mod config;
mod report;
mod run;

use std::path::{Path, PathBuf};

pub use config::{
    validate_config, AnalysisSettings, CiSettings, RunConfig, ValidationIssue, ValidationReport,
};
pub use report::{cmd_report, render_heatmap_svg, MetricsFile, ReportSummary};
pub use run::{cmd_run, BackendSummary, Clock, RunManifest, RunOptions, RunSummary};

use crate::analysis::AnalysisError;
use crate::backends::BackendError;
use crate::personas::PersonaError;
use crate::stats::StatsError;

pub const EXIT_OK: i32 = 0;
/// Configuration or inputs failed validation.
pub const EXIT_INVALID: i32 = 1;
/// The run or report could not be carried out.
pub const EXIT_FAILURE: i32 = 2;
/// The run finished but some prompts could not be collected.
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("validation failed with {} issue(s)", .0.len())]
    Invalid(Vec<ValidationIssue>),
    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("run directory {0} already exists (pass --resume to continue it)")]
    RunExists(PathBuf),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Persona(#[from] PersonaError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> CliError {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn artifact(path: &Path, message: impl ToString) -> CliError {
        CliError::Artifact {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Invalid(_) => EXIT_INVALID,
            _ => EXIT_FAILURE,
        }
    }
}

/// Fixed-point rendering; negative zero prints without a sign.
pub fn fixed(x: f64, decimals: usize) -> String {
    let s = format!("{x:.decimals$}");
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_owned()
    } else {
        s
    }
}

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_json<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::artifact(path, e))?;
    text.push('\n');
    write_file(path, text)
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::MissingArtifact(path.to_path_buf()))
        }
        Err(e) => return Err(CliError::io(path, e)),
    };
    serde_json::from_slice(&bytes).map_err(|e| CliError::artifact(path, e))
}

pub(crate) fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("write to memory");
    for r in rows {
        w.write_record(r).expect("write to memory");
    }
    w.into_inner().expect("flush to memory")
}

pub(crate) fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    if !path.exists() {
        return Err(CliError::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::artifact(path, e))?;
    let header = r
        .headers()
        .map_err(|e| CliError::artifact(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::artifact(path, e))?;
        rows.push(rec.iter().map(str::to_owned).collect());
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_formatting() {
        assert_eq!(fixed(3.92, 2), "3.92");
        assert_eq!(fixed(100.025_000_1, 2), "100.03");
        assert_eq!(fixed(-0.0000001, 6), "0.000000");
        assert_eq!(fixed(-0.5, 1), "-0.5");
        assert_eq!(fixed(90.7, 1), "90.7");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let rows = vec![vec!["a,b".to_owned(), "1".to_owned()]];
        write_file(&p, csv_bytes(&["id", "v"], &rows)).unwrap();
        let (h, r) = read_csv(&p).unwrap();
        assert_eq!(h, ["id", "v"]);
        assert_eq!(r, rows);
        assert!(matches!(read_csv(&dir.path().join("nope.csv")), Err(CliError::MissingArtifact(_))));
    }
}
