//! Persisted ranking runs.
//!
//! A run file is JSON lines: one header record followed by one record per
//! ranked candidate, grouped by query in ascending query id, rank ascending.
//!
//! ```text
//! {"format":"harmoniser-run","version":1,"run_id":"...","model":"bm25","mode":"end_to_end","k":50,"config":{...}}
//! {"query_id":"q1","rank":1,"candidate_id":"q9","score":7.25}
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::PipelineError;
use crate::corpus::QuestionId;
use crate::fingerprint::fnv1a64;

pub const RUN_FORMAT: &str = "harmoniser-run";
pub const RUN_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Bm25,
    Dense,
    Hybrid,
    External,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Bm25 => "bm25",
            ModelKind::Dense => "dense",
            ModelKind::Hybrid => "hybrid",
            ModelKind::External => "external",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bm25" => Ok(Self::Bm25),
            "dense" => Ok(Self::Dense),
            "hybrid" => Ok(Self::Hybrid),
            "external" => Ok(Self::External),
            other => Err(format!("unknown model {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    EndToEnd,
    Rerank,
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::EndToEnd => "end_to_end",
            RunMode::Rerank => "rerank",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: QuestionId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingRun {
    pub run_id: String,
    pub model: ModelKind,
    pub mode: RunMode,
    pub k: usize,
    pub per_query: BTreeMap<QuestionId, Vec<Candidate>>,
    pub config: Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    run_id: String,
    model: ModelKind,
    mode: RunMode,
    k: usize,
    config: Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Row<'a> {
    query_id: std::borrow::Cow<'a, str>,
    rank: usize,
    candidate_id: std::borrow::Cow<'a, str>,
    score: f64,
}

/// Deterministic run identifier derived from the run's parameters.
pub fn derive_run_id(model: ModelKind, mode: RunMode, k: usize, config: &Value) -> String {
    let canonical = serde_json::json!({"model": model, "mode": mode, "k": k, "config": config});
    let bytes = serde_json::to_vec(&canonical).expect("json value serialises");
    format!("{model}-{mode}-{:016x}", fnv1a64(&bytes))
}

impl RankingRun {
    pub fn new(
        model: ModelKind,
        mode: RunMode,
        k: usize,
        per_query: BTreeMap<QuestionId, Vec<Candidate>>,
        config: Value,
    ) -> Self {
        Self {
            run_id: derive_run_id(model, mode, k, &config),
            model,
            mode,
            k,
            per_query,
            config,
        }
    }

    pub fn candidates(&self, query: &QuestionId) -> Option<&[Candidate]> {
        self.per_query.get(query).map(Vec::as_slice)
    }

    pub fn top1(&self, query: &QuestionId) -> Option<&Candidate> {
        self.per_query.get(query).and_then(|l| l.first())
    }

    pub fn query_count(&self) -> usize {
        self.per_query.len()
    }

    /// Checks the structural invariants: no self matches, no repeated
    /// candidates, lengths within `k`, finite scores.
    pub fn validate(&self) -> Result<(), PipelineError> {
        for (query, list) in &self.per_query {
            if list.len() > self.k {
                return Err(PipelineError::InvalidRun(format!(
                    "query {query} has {} candidates, k = {}",
                    list.len(),
                    self.k
                )));
            }
            let mut seen = HashSet::with_capacity(list.len());
            for c in list {
                if &c.id == query {
                    return Err(PipelineError::InvalidRun(format!(
                        "query {query} retrieves itself"
                    )));
                }
                if !seen.insert(&c.id) {
                    return Err(PipelineError::InvalidRun(format!(
                        "query {query} lists {} twice",
                        c.id
                    )));
                }
                if !c.score.is_finite() {
                    return Err(PipelineError::InvalidRun(format!(
                        "non-finite score for ({query}, {})",
                        c.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), PipelineError> {
        self.validate()?;
        let header = Header {
            format: RUN_FORMAT.into(),
            version: RUN_VERSION,
            run_id: self.run_id.clone(),
            model: self.model,
            mode: self.mode,
            k: self.k,
            config: self.config.clone(),
        };
        let io = |e: std::io::Error| PipelineError::Io(e.to_string());
        serde_json::to_writer(&mut out, &header).map_err(|e| PipelineError::Io(e.to_string()))?;
        out.write_all(b"\n").map_err(io)?;
        for (query, list) in &self.per_query {
            for (i, c) in list.iter().enumerate() {
                let row = Row {
                    query_id: query.as_str().into(),
                    rank: i + 1,
                    candidate_id: c.id.as_str().into(),
                    score: c.score,
                };
                serde_json::to_writer(&mut out, &row)
                    .map_err(|e| PipelineError::Io(e.to_string()))?;
                out.write_all(b"\n").map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, PipelineError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(buf)
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self, PipelineError> {
        let bad = |line: usize, reason: String| PipelineError::BadRunFile { line, reason };
        let mut lines = input.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| bad(1, "missing header".into()))?
            .map_err(|e| PipelineError::Io(e.to_string()))?;
        let header: Header =
            serde_json::from_str(&header_line).map_err(|e| bad(1, e.to_string()))?;
        if header.format != RUN_FORMAT {
            return Err(bad(1, format!("unexpected format {:?}", header.format)));
        }
        if header.version != RUN_VERSION {
            return Err(bad(1, format!("unsupported version {}", header.version)));
        }
        let mut per_query: BTreeMap<QuestionId, Vec<Candidate>> = BTreeMap::new();
        let mut last_query: Option<QuestionId> = None;
        for (idx, line) in lines.enumerate() {
            let line_no = idx + 2;
            let line = line.map_err(|e| PipelineError::Io(e.to_string()))?;
            let row: Row<'_> = serde_json::from_str(&line).map_err(|e| bad(line_no, e.to_string()))?;
            let query = QuestionId::new(row.query_id.as_ref());
            if last_query.as_ref() != Some(&query) {
                if last_query.as_ref().is_some_and(|prev| prev >= &query) {
                    return Err(bad(line_no, "queries out of order".into()));
                }
                last_query = Some(query.clone());
            }
            let list = per_query.entry(query).or_default();
            if row.rank != list.len() + 1 {
                return Err(bad(
                    line_no,
                    format!("expected rank {}, found {}", list.len() + 1, row.rank),
                ));
            }
            list.push(Candidate {
                id: QuestionId::new(row.candidate_id.as_ref()),
                score: row.score,
            });
        }
        let run = RankingRun {
            run_id: header.run_id,
            model: header.model,
            mode: header.mode,
            k: header.k,
            per_query,
            config: header.config,
        };
        run.validate()?;
        Ok(run)
    }
}
