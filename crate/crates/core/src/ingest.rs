//! JSON Lines reading and writing for logged samples.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::model::{LoggedSample, SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

impl IngestError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// A rejected input line, as written to the error sidecar.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedLine {
    pub line: usize,
    pub message: String,
    pub raw: String,
}

#[derive(Debug, Default)]
pub struct Ingested {
    pub samples: Vec<LoggedSample>,
    pub rejected: Vec<RejectedLine>,
}

fn parse_line(raw: &str) -> Result<LoggedSample, String> {
    let sample: LoggedSample = serde_json::from_str(raw).map_err(|e| e.to_string())?;
    if sample.schema != SCHEMA_VERSION {
        return Err(format!("unsupported schema version {}", sample.schema));
    }
    Ok(sample)
}

/// Parses JSONL. Blank lines are skipped. Malformed lines are collected in
/// `rejected`, or abort the read when `strict`.
pub fn parse_jsonl<R: BufRead>(reader: R, strict: bool, origin: &Path) -> Result<Ingested, IngestError> {
    let mut out = Ingested::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let raw = line.map_err(|e| IngestError::io(origin, e))?;
        if raw.trim().is_empty() {
            continue;
        }
        match parse_line(&raw) {
            Ok(s) => out.samples.push(s),
            Err(message) if strict => return Err(IngestError::Malformed { line: line_no, message }),
            Err(message) => {
                log::warn!("{}:{line_no}: {message}", origin.display());
                out.rejected.push(RejectedLine {
                    line: line_no,
                    message,
                    raw,
                });
            }
        }
    }
    Ok(out)
}

pub fn read_jsonl(path: &Path, strict: bool) -> Result<Ingested, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    parse_jsonl(BufReader::new(file), strict, path)
}

/// Writes one JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IngestError> {
    let file = File::create(path).map_err(|e| IngestError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(row).expect("serializable row");
        writeln!(w, "{line}").map_err(|e| IngestError::io(path, e))?;
    }
    w.flush().map_err(|e| IngestError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TaskFamily;

    const GOOD: &str = r#"{"schema":1,"sample_id":"a","task":"qa","producer_id":"m1","query":"q","output":"o","evaluator_scores":{"e1":0.5},"gt":0.7,"note":"kept"}"#;

    #[test]
    fn skips_blank_and_collects_bad_lines() {
        let text = format!("{GOOD}\n\n{{not json\n{}\n", GOOD.replace("\"schema\":1", "\"schema\":2"));
        let got = parse_jsonl(text.as_bytes(), false, Path::new("mem")).unwrap();
        assert_eq!(got.samples.len(), 1);
        assert_eq!(got.rejected.iter().map(|r| r.line).collect::<Vec<_>>(), vec![3, 4]);
        assert_eq!(got.samples[0].extra["note"], "kept");
        assert_eq!(got.samples[0].task, TaskFamily::QA);
    }

    #[test]
    fn strict_mode_aborts() {
        let text = format!("{GOOD}\n{{bad\n");
        let err = parse_jsonl(text.as_bytes(), true, Path::new("mem")).unwrap_err();
        assert!(matches!(err, IngestError::Malformed { line: 2, .. }));
    }

    #[test]
    fn write_then_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        let s = vec![
            LoggedSample::new("a", TaskFamily::Summarization, "m", "q", "o")
                .with_gt(0.1 + 0.2)
                .with_evaluator("e", 1.0 / 3.0),
        ];
        write_jsonl(&path, &s).unwrap();
        let back = read_jsonl(&path, true).unwrap();
        assert_eq!(back.samples, s);
    }
}
