//! Append-only JSON Lines log of oracle answers, used for offline replay.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{OracleKind, RecordedMode};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub context_digest: String,
    pub kind: OracleKind,
    pub raw_text: String,
    pub mode: RecordedMode,
}

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("transcript {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("transcript {path} line {line}: {source}")]
    Format {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Default)]
pub struct Transcript {
    path: Option<PathBuf>,
    entries: Vec<TranscriptEntry>,
    index: BTreeMap<(String, OracleKind), usize>,
}

impl Transcript {
    pub fn in_memory() -> Transcript {
        Transcript::default()
    }

    /// Opens `path`, loading existing entries; a missing file starts empty.
    pub fn open(path: &Path) -> Result<Transcript, TranscriptError> {
        let mut t = Transcript {
            path: Some(path.to_path_buf()),
            ..Transcript::default()
        };
        let io = |source| TranscriptError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(t),
            Err(e) => return Err(io(e)),
        };
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(&line).map_err(|source| TranscriptError::Format {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })?;
            t.insert(entry);
        }
        Ok(t)
    }

    fn insert(&mut self, entry: TranscriptEntry) -> bool {
        let key = (entry.context_digest.clone(), entry.kind);
        if self.index.contains_key(&key) {
            return false;
        }
        self.index.insert(key, self.entries.len());
        self.entries.push(entry);
        true
    }

    pub fn lookup(&self, context_digest: &str, kind: OracleKind) -> Option<&TranscriptEntry> {
        self.index
            .get(&(context_digest.to_string(), kind))
            .map(|i| &self.entries[*i])
    }

    /// Appends an entry unless its key is already present. Returns whether
    /// it was added.
    pub fn record(&mut self, entry: TranscriptEntry) -> Result<bool, TranscriptError> {
        if self.lookup(&entry.context_digest, entry.kind).is_some() {
            return Ok(false);
        }
        if let Some(path) = &self.path {
            let io = |source| TranscriptError::Io {
                path: path.clone(),
                source,
            };
            let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
            let line = serde_json::to_string(&entry).expect("entry serializes");
            writeln!(f, "{line}").map_err(io)?;
        }
        Ok(self.insert(entry))
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(d: &str, raw: &str) -> TranscriptEntry {
        TranscriptEntry {
            context_digest: d.into(),
            kind: OracleKind::KeyVariables,
            raw_text: raw.into(),
            mode: RecordedMode::Heuristic,
        }
    }

    #[test]
    fn round_trips_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut t = Transcript::open(&path).unwrap();
        assert!(t.is_empty());
        assert!(t.record(entry("a", "{\"x\": 1}\nmore")).unwrap());
        assert!(!t.record(entry("a", "other")).unwrap());
        assert!(t.record(entry("b", "y")).unwrap());
        let back = Transcript::open(&path).unwrap();
        assert_eq!(back.entries(), t.entries());
        assert_eq!(back.lookup("a", OracleKind::KeyVariables).unwrap().raw_text, "{\"x\": 1}\nmore");
        assert!(back.lookup("a", OracleKind::FunctionSequence).is_none());
        assert!(Transcript::in_memory().lookup("a", OracleKind::KeyVariables).is_none());
    }

    #[test]
    fn reports_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, "not json\n").unwrap();
        assert!(matches!(Transcript::open(&path), Err(TranscriptError::Format { line: 1, .. })));
    }
}
