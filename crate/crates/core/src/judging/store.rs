use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::Serialize;
use thiserror::Error;

use super::{Annotation, MarkerBounds};

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum IngestError {
    #[error("annotator_id must be non-empty")]
    EmptyAnnotator,
    #[error("unknown continuation {id:?}")]
    UnknownContinuation { id: String },
    #[error("marker_tick {tick} outside [{lo}, {hi}]")]
    OutOfRange { tick: u64, lo: u64, hi: u64 },
    #[error("conflicting annotation already stored for ({}, {})", existing.continuation_id, existing.annotator_id)]
    Conflict { existing: Annotation },
    #[error("annotation store i/o: {message}")]
    Io { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ingested {
    Created(Annotation),
    /// An identical judgement was already stored; nothing was written.
    Existing(Annotation),
}

impl Ingested {
    pub fn annotation(&self) -> &Annotation {
        match self {
            Ingested::Created(a) | Ingested::Existing(a) => a,
        }
    }
}

#[derive(Debug, Default)]
struct Inner {
    rows: Vec<Annotation>,
    index: HashMap<(String, String), usize>,
}

impl Inner {
    fn check(&self, ann: &Annotation, bounds: Option<MarkerBounds>) -> Result<Option<Annotation>, IngestError> {
        if ann.annotator_id.trim().is_empty() {
            return Err(IngestError::EmptyAnnotator);
        }
        let Some(b) = bounds else {
            return Err(IngestError::UnknownContinuation {
                id: ann.continuation_id.clone(),
            });
        };
        if !b.contains(ann.marker_tick) {
            return Err(IngestError::OutOfRange {
                tick: ann.marker_tick,
                lo: b.lo,
                hi: b.hi,
            });
        }
        let key = (ann.continuation_id.clone(), ann.annotator_id.clone());
        match self.index.get(&key) {
            Some(&i) if self.rows[i].same_content(ann) => Ok(Some(self.rows[i].clone())),
            Some(&i) => Err(IngestError::Conflict {
                existing: self.rows[i].clone(),
            }),
            None => Ok(None),
        }
    }

    fn insert(&mut self, ann: Annotation) {
        self.index
            .insert((ann.continuation_id.clone(), ann.annotator_id.clone()), self.rows.len());
        self.rows.push(ann);
    }
}

/// Append-only JSON-lines annotation store. One row per (continuation,
/// annotator); the uniqueness check and the append happen under one lock.
#[derive(Debug)]
pub struct AnnotationStore {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

fn io_err(e: impl std::fmt::Display) -> IngestError {
    IngestError::Io { message: e.to_string() }
}

impl AnnotationStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            inner: Mutex::new(Inner::default()),
        }
    }

    /// Opens the store at `path`, loading existing rows if the file exists.
    pub fn open(path: &Path) -> Result<Self, IngestError> {
        let mut inner = Inner::default();
        if path.exists() {
            let text = fs::read_to_string(path).map_err(io_err)?;
            for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let ann: Annotation = serde_json::from_str(line).map_err(|e| io_err(format!("line {}: {e}", n + 1)))?;
                inner.insert(ann);
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(inner),
        })
    }

    /// Validates and stores one annotation. `bounds` are the marker bounds
    /// of the continuation, or `None` if it does not exist.
    pub fn ingest(&self, ann: Annotation, bounds: Option<MarkerBounds>) -> Result<Ingested, IngestError> {
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(existing) = inner.check(&ann, bounds)? {
            return Ok(Ingested::Existing(existing));
        }
        self.append(std::slice::from_ref(&ann))?;
        inner.insert(ann.clone());
        Ok(Ingested::Created(ann))
    }

    /// Ingests a batch with a single file append. Stops at the first error;
    /// annotations before it are kept.
    pub fn ingest_all(
        &self,
        anns: impl IntoIterator<Item = (Annotation, Option<MarkerBounds>)>,
    ) -> Result<usize, IngestError> {
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let mut fresh = Vec::new();
        let mut result = Ok(());
        for (ann, bounds) in anns {
            match inner.check(&ann, bounds) {
                Ok(Some(_)) => {}
                Ok(None) => {
                    inner.insert(ann.clone());
                    fresh.push(ann);
                }
                Err(e) => {
                    result = Err(e);
                    break;
                }
            }
        }
        self.append(&fresh)?;
        result.map(|_| fresh.len())
    }

    fn append(&self, anns: &[Annotation]) -> Result<(), IngestError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        if anns.is_empty() {
            return Ok(());
        }
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err)?;
        }
        let mut buf = String::new();
        for a in anns {
            buf.push_str(&serde_json::to_string(a).map_err(io_err)?);
            buf.push('\n');
        }
        let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err)?;
        f.write_all(buf.as_bytes()).map_err(io_err)
    }

    /// All rows in ingestion order.
    pub fn all(&self) -> Vec<Annotation> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).rows.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, continuation_id: &str, annotator_id: &str) -> Option<Annotation> {
        let inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        inner
            .index
            .get(&(continuation_id.to_string(), annotator_id.to_string()))
            .map(|&i| inner.rows[i].clone())
    }
}
