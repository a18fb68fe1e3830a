//! Shared plumbing: error-to-exit-code mapping, atomic file writes, the
//! run manifest, and problem loading with line-anchored findings.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use uccd::model::{build_problem, ProblemDocument, UccdProblem};

/// Stable exit-code contract: 0 success, 2 validation, 3 compatibility,
/// 4 solver non-optimal, 5 internal.
#[derive(Debug)]
pub enum CliError {
    Validation(Vec<String>),
    Compatibility(String),
    NonOptimal(String),
    Internal(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Validation(_) => 2,
            Self::Compatibility(_) => 3,
            Self::NonOptimal(_) => 4,
            Self::Internal(_) => 5,
        }
    }

    pub fn report(&self) {
        match self {
            Self::Validation(findings) => {
                for f in findings {
                    eprintln!("finding: {f}");
                }
            }
            Self::Compatibility(msg) => eprintln!("incompatible: {msg}"),
            Self::NonOptimal(msg) => eprintln!("solver: {msg}"),
            Self::Internal(err) => eprintln!("internal error: {err:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        Self::Internal(e)
    }
}

pub fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(vec![msg.into()])
}

/// Atomic write: temp file in the target directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp-write");
    std::fs::write(&tmp, bytes)
        .and_then(|()| std::fs::rename(&tmp, path))
        .map_err(|e| CliError::Internal(anyhow::anyhow!("writing {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Internal(e.into()))?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub struct LoadedProblem {
    pub problem: UccdProblem,
    pub document: ProblemDocument,
    pub content_hash: String,
    pub bytes: Vec<u8>,
}

/// Reads, parses, and validates a problem document; findings carry the
/// parser's line/column anchors or the failing field name.
pub fn load_problem(path: &Path) -> Result<LoadedProblem, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| validation(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|e| validation(format!("{}: not valid UTF-8: {e}", path.display())))?;
    let document =
        ProblemDocument::from_json(&text).map_err(|e| validation(e.to_string()))?;
    let problem = build_problem(&document).map_err(|e| validation(e.to_string()))?;
    let mut hash = String::new();
    for byte in Sha256::digest(&bytes) {
        let _ = write!(hash, "{byte:02x}");
    }
    Ok(LoadedProblem { problem, document, content_hash: hash, bytes })
}

/// Written into the output directory before any solve starts.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub problem: String,
    pub formulation: String,
    pub seed: u64,
    pub overrides: serde_json::Value,
    pub output_dir: String,
    pub tool_version: String,
    pub content_hash: String,
}

impl RunManifest {
    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        write_json(&out_dir.join("manifest.json"), self)
    }
}

pub fn ensure_out_dir(dir: &Path) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Internal(anyhow::anyhow!("creating {}: {e}", dir.display())))?;
    Ok(dir.to_path_buf())
}

/// Shortest-roundtrip float formatting shared by every CSV writer so that
/// identical runs produce identical bytes.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
