//! Append-only annotation log with a uniqueness index.
//!
//! One JSON record per line. An append is acknowledged only after the line
//! and its newline have been synced to disk. On open the log is replayed; a
//! final line without its newline is a torn write from a crash and is cut off.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use harmoniser_core::evaluation::Annotation;
use harmoniser_core::QuestionId;
use thiserror::Error;

type Key = (QuestionId, QuestionId, String, String);

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("annotation for ({query}, {candidate}) by {annotator} on run {run_id} already exists")]
    Duplicate {
        query: QuestionId,
        candidate: QuestionId,
        annotator: String,
        run_id: String,
    },
    #[error("annotation log {path}, line {line}: {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("annotation log {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

struct Inner {
    file: File,
    log: Vec<Annotation>,
    keys: HashMap<Key, usize>,
}

pub struct AnnotationStore {
    path: PathBuf,
    inner: RwLock<Inner>,
}

impl AnnotationStore {
    /// Opens or creates the log at `path` and replays it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io)?;

        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < bytes.len() {
            file.set_len(complete as u64).map_err(io)?;
            file.sync_data().map_err(io)?;
        }
        file.seek(SeekFrom::End(0)).map_err(io)?;

        let mut log = Vec::new();
        let mut keys = HashMap::new();
        for (idx, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let corrupt = |reason: String| StoreError::Corrupt {
                path: path.clone(),
                line: idx + 1,
                reason,
            };
            let a: Annotation = serde_json::from_slice(line).map_err(|e| corrupt(e.to_string()))?;
            if keys.insert(a.key(), log.len()).is_some() {
                return Err(corrupt("duplicate annotation key".into()));
            }
            log.push(a);
        }
        Ok(Self {
            path,
            inner: RwLock::new(Inner { file, log, keys }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Durably appends `a` and returns its position in the log.
    pub fn append(&self, a: Annotation) -> Result<usize, StoreError> {
        let mut inner = self.inner.write().expect("annotation lock poisoned");
        let key = a.key();
        if inner.keys.contains_key(&key) {
            let (query, candidate, annotator, run_id) = key;
            return Err(StoreError::Duplicate {
                query,
                candidate,
                annotator,
                run_id,
            });
        }
        let mut line = serde_json::to_vec(&a).expect("annotation serialises");
        line.push(b'\n');
        let io = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        inner.file.write_all(&line).map_err(io)?;
        inner.file.sync_data().map_err(io)?;
        let id = inner.log.len();
        inner.keys.insert(key, id);
        inner.log.push(a);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("annotation lock poisoned").log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Annotations in log order, optionally restricted to one run.
    pub fn snapshot(&self, run_id: Option<&str>) -> Vec<Annotation> {
        let inner = self.inner.read().expect("annotation lock poisoned");
        inner
            .log
            .iter()
            .filter(|a| run_id.map_or(true, |r| a.run_id == r))
            .cloned()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use harmoniser_core::evaluation::Label;

    fn ann(q: &str, label: Label) -> Annotation {
        Annotation {
            query_id: q.into(),
            candidate_id: "c".into(),
            label,
            annotator: "ann".into(),
            run_id: "run".into(),
            timestamp: "2024-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn replay_reconstructs_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let store = AnnotationStore::open(&path).unwrap();
        assert_eq!(store.append(ann("a", Label::Exact)).unwrap(), 0);
        assert_eq!(store.append(ann("b", Label::TotalMismatch)).unwrap(), 1);
        assert!(matches!(store.append(ann("a", Label::Equivalent)), Err(StoreError::Duplicate { .. })));
        let before = store.snapshot(None);
        drop(store);

        let reopened = AnnotationStore::open(&path).unwrap();
        assert_eq!(reopened.snapshot(None), before);
        assert!(matches!(reopened.append(ann("b", Label::Exact)), Err(StoreError::Duplicate { .. })));
        assert_eq!(reopened.snapshot(Some("other")), vec![]);
    }

    #[test]
    fn torn_tail_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let store = AnnotationStore::open(&path).unwrap();
        store.append(ann("a", Label::Exact)).unwrap();
        drop(store);
        let whole = std::fs::read(&path).unwrap();
        let mut torn = whole.clone();
        torn.extend_from_slice(br#"{"query_id":"b","candi"#);
        std::fs::write(&path, &torn).unwrap();

        let store = AnnotationStore::open(&path).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(std::fs::read(&path).unwrap(), whole);
        store.append(ann("b", Label::Exact)).unwrap();
        drop(store);
        assert_eq!(AnnotationStore::open(&path).unwrap().len(), 2);
    }

    #[test]
    fn corrupt_or_duplicate_lines_refuse_to_open() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        std::fs::write(&path, "not json\n").unwrap();
        assert!(matches!(AnnotationStore::open(&path), Err(StoreError::Corrupt { line: 1, .. })));

        let line = serde_json::to_string(&ann("a", Label::Exact)).unwrap();
        std::fs::write(&path, format!("{line}\n{line}\n")).unwrap();
        assert!(matches!(AnnotationStore::open(&path), Err(StoreError::Corrupt { line: 2, .. })));
    }
}
