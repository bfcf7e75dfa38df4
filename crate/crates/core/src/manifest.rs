//! Dataset manifests: one JSON object per line.
//!
//! ```text
//! {"id":"img1","path":"real/img1.png","label":"real","source_model":"laion"}
//! {"id":"img1-fake","path":"fake/img1.png","label":"fake","source_model":"dalle3","prompt":"a cat","pair_id":"img1"}
//! ```
//!
//! Relative paths are resolved against the directory holding the manifest.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate id {id:?} on lines {first_line} and {second_line}")]
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Real => "real",
            Label::Fake => "fake",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "real" => Ok(Label::Real),
            "fake" => Ok(Label::Fake),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub label: Label,
    pub source_model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    /// Shared by a real image and the fake generated from its caption.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
}

impl ManifestEntry {
    pub fn new(
        id: impl Into<String>,
        path: impl Into<String>,
        label: Label,
        source_model: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            path: path.into(),
            label,
            source_model: source_model.into(),
            prompt: None,
            pair_id: None,
        }
    }

    /// `path` resolved against `base_dir` unless already absolute.
    pub fn resolve_path(&self, base_dir: &Path) -> PathBuf {
        let p = Path::new(&self.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    }
}

/// Parse manifest lines. Blank lines are skipped but still counted.
pub fn parse_manifest(reader: impl BufRead) -> Result<Vec<ManifestEntry>, ManifestError> {
    let mut entries = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| ManifestError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry =
            serde_json::from_str(&line).map_err(|e| ManifestError::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
        if entry.id.is_empty() {
            return Err(ManifestError::Invalid {
                line: lineno,
                message: "empty id".into(),
            });
        }
        if let Some(&first_line) = seen.get(&entry.id) {
            return Err(ManifestError::DuplicateId {
                id: entry.id,
                first_line,
                second_line: lineno,
            });
        }
        seen.insert(entry.id.clone(), lineno);
        entries.push(entry);
    }
    Ok(entries)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, ManifestError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_manifest(BufReader::new(file))
}

pub fn write_entries(
    mut out: impl Write,
    entries: &[ManifestEntry],
) -> Result<(), std::io::Error> {
    for entry in entries {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_manifest(
    path: impl AsRef<Path>,
    entries: &[ManifestEntry],
) -> Result<(), ManifestError> {
    let path = path.as_ref();
    let io_err = |source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    write_entries(std::io::BufWriter::new(file), entries).map_err(io_err)
}

/// Directory against which a manifest's relative paths resolve.
pub fn manifest_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}
