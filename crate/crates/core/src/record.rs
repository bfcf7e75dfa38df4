//! Per-image score records and the line-delimited score file.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Psnr,
    Ssim,
    L1,
    L2,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Psnr, Metric::Ssim, Metric::L1, Metric::L2];

    /// Sign that turns a raw metric value into a discrepancy where lower
    /// means "closer to what the model produces".
    pub fn orientation(self) -> f64 {
        match self {
            Metric::Psnr | Metric::Ssim => -1.0,
            Metric::L1 | Metric::L2 => 1.0,
        }
    }

    pub fn orient(self, raw: f64) -> f64 {
        self.orientation() * raw
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Psnr => "psnr",
            Metric::Ssim => "ssim",
            Metric::L1 => "l1",
            Metric::L2 => "l2",
        })
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "psnr" => Ok(Metric::Psnr),
            "ssim" => Ok(Metric::Ssim),
            "l1" => Ok(Metric::L1),
            "l2" => Ok(Metric::L2),
            other => Err(format!("unknown metric {other:?} (psnr, ssim, l1, l2)")),
        }
    }
}

/// Discrepancy of one image under one metric.
///
/// `per_sample` holds the raw metric for each of the `k` recoveries; `delta`
/// is their orientation-adjusted aggregate. `tau` and `label_hat` are filled
/// in when a threshold was applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub metric: Metric,
    pub per_sample: Vec<f64>,
    pub delta: f64,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_hat: Option<Label>,
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: per_sample has {len} values but k = {k}")]
    Inconsistent { line: usize, len: usize, k: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn parse_scores(reader: impl BufRead) -> Result<Vec<ScoreRecord>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| RecordError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScoreRecord = serde_json::from_str(&line).map_err(|e| RecordError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if rec.k == 0 || rec.per_sample.len() != rec.k {
            return Err(RecordError::Inconsistent {
                line: lineno,
                len: rec.per_sample.len(),
                k: rec.k,
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>, RecordError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| RecordError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scores(BufReader::new(file))
}

/// Append-only writer, one JSON record per line.
pub struct ScoreWriter<W: Write> {
    out: W,
}

impl<W: Write> ScoreWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, record: &ScoreRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orientation_table() {
        assert_eq!(Metric::Psnr.orient(30.0), -30.0);
        assert_eq!(Metric::Ssim.orient(0.5), -0.5);
        assert_eq!(Metric::L1.orient(3.0), 3.0);
        assert_eq!(Metric::L2.orient(9.0), 9.0);
    }

    #[test]
    fn writer_reader_round_trip() {
        let rec = ScoreRecord {
            id: "x".into(),
            metric: Metric::Psnr,
            per_sample: vec![100.0, 42.110_3],
            delta: -71.055_15,
            k: 2,
            tau: Some(-50.0),
            label_hat: Some(Label::Fake),
        };
        let mut w = ScoreWriter::new(Vec::new());
        w.write(&rec).unwrap();
        let back = parse_scores(w.into_inner().as_slice()).unwrap();
        assert_eq!(back, vec![rec]);
    }

    #[test]
    fn k_mismatch_is_rejected() {
        let text = r#"{"id":"x","metric":"l1","per_sample":[1.0],"delta":1.0,"k":2}"#;
        assert!(matches!(
            parse_scores(text.as_bytes()),
            Err(RecordError::Inconsistent { line: 1, .. })
        ));
    }
}
