//! Pair-score exchange with out-of-process scorers (e.g. cross-encoders).
//!
//! The manifest lists `{"query_id","candidate_id"}` records; the scorer
//! answers with `{"query_id","candidate_id","score"}` records. Every manifest
//! pair must be answered exactly once and nothing else may be answered.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::run::RankingRun;
use super::{PairScorer, PipelineError};
use crate::corpus::QuestionId;

pub type Pair = (QuestionId, QuestionId);

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRow {
    query_id: QuestionId,
    candidate_id: QuestionId,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreRow {
    query_id: QuestionId,
    candidate_id: QuestionId,
    score: f64,
}

/// Pairs a re-ranker must score: each query's top-`depth` base candidates.
pub fn manifest_pairs(base: &RankingRun, depth: usize) -> Vec<Pair> {
    base.per_query
        .iter()
        .flat_map(|(q, list)| {
            list.iter()
                .take(depth)
                .map(move |c| (q.clone(), c.id.clone()))
        })
        .collect()
}

pub fn write_manifest<W: Write>(pairs: &[Pair], mut out: W) -> Result<(), PipelineError> {
    let io = |e: std::io::Error| PipelineError::Io(e.to_string());
    for (q, c) in pairs {
        let row = ManifestRow {
            query_id: q.clone(),
            candidate_id: c.clone(),
        };
        serde_json::to_writer(&mut out, &row).map_err(|e| PipelineError::Io(e.to_string()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_manifest<R: BufRead>(input: R) -> Result<Vec<Pair>, PipelineError> {
    let mut pairs = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| PipelineError::Io(e.to_string()))?;
        let row: ManifestRow = serde_json::from_str(&line).map_err(|e| PipelineError::BadScoreFile {
            line: i + 1,
            reason: e.to_string(),
        })?;
        pairs.push((row.query_id, row.candidate_id));
    }
    Ok(pairs)
}

/// Scores supplied by an external process.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalScores {
    pub source: String,
    scores: HashMap<Pair, f64>,
}

impl ExternalScores {
    pub fn from_pairs(source: impl Into<String>, scores: impl IntoIterator<Item = (Pair, f64)>) -> Self {
        Self {
            source: source.into(),
            scores: scores.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Reads a score file. With `expected`, the file must answer exactly those pairs.
    pub fn read<R: BufRead>(
        source: impl Into<String>,
        input: R,
        expected: Option<&[Pair]>,
    ) -> Result<Self, PipelineError> {
        let mut scores = HashMap::new();
        for (i, line) in input.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| PipelineError::Io(e.to_string()))?;
            let row: ScoreRow = serde_json::from_str(&line).map_err(|e| PipelineError::BadScoreFile {
                line: line_no,
                reason: e.to_string(),
            })?;
            if !row.score.is_finite() {
                return Err(PipelineError::BadScoreFile {
                    line: line_no,
                    reason: "non-finite score".into(),
                });
            }
            let key = (row.query_id, row.candidate_id);
            if scores.contains_key(&key) {
                return Err(PipelineError::BadScoreFile {
                    line: line_no,
                    reason: format!("pair ({}, {}) scored twice", key.0, key.1),
                });
            }
            scores.insert(key, row.score);
        }
        if let Some(expected) = expected {
            let wanted: HashSet<&Pair> = expected.iter().collect();
            if let Some((q, c)) = expected.iter().find(|p| !scores.contains_key(*p)) {
                return Err(PipelineError::UnmatchedPair {
                    query: q.clone(),
                    candidate: c.clone(),
                });
            }
            if let Some((q, c)) = scores.keys().find(|p| !wanted.contains(p)) {
                return Err(PipelineError::UnmatchedPair {
                    query: q.clone(),
                    candidate: c.clone(),
                });
            }
        }
        Ok(Self {
            source: source.into(),
            scores,
        })
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), PipelineError> {
        let mut rows: Vec<(&Pair, &f64)> = self.scores.iter().collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        let io = |e: std::io::Error| PipelineError::Io(e.to_string());
        for ((q, c), s) in rows {
            let row = ScoreRow {
                query_id: q.clone(),
                candidate_id: c.clone(),
                score: *s,
            };
            serde_json::to_writer(&mut out, &row).map_err(|e| PipelineError::Io(e.to_string()))?;
            out.write_all(b"\n").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

impl PairScorer for ExternalScores {
    fn model(&self) -> super::ModelKind {
        super::ModelKind::External
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({"source": self.source, "pairs": self.scores.len()})
    }

    fn score(&self, query: &QuestionId, candidate: &QuestionId) -> Result<f64, PipelineError> {
        self.scores
            .get(&(query.clone(), candidate.clone()))
            .copied()
            .ok_or_else(|| PipelineError::ScorerFailure {
                query: query.clone(),
                candidate: candidate.clone(),
                reason: "pair missing from score file".into(),
            })
    }
}
