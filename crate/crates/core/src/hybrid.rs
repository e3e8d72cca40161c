//! Fusion of lexical, dense and multi-vector signals into a single score.
//!
//! Each signal is min-max normalised within the query's candidate pool and
//! the normalised signals are combined as a weighted mean.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{build_input_sequence, Corpus, CorpusError, QuestionId};
use crate::embedding::{dot, EmbeddingError, EmbeddingStore, TokenMatrix};
use crate::lexical::{Bm25Scorer, LexicalError};
use crate::topk::{Scored, TopK};

#[derive(Debug, Error, PartialEq)]
pub enum HybridError {
    #[error("signal {0} has positive weight but is missing")]
    MissingSignal(Signal),
    #[error("invalid fusion weights: {0}")]
    InvalidWeights(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("empty token matrix")]
    EmptyMatrix,
    #[error("unknown question {0}")]
    UnknownQuestion(QuestionId),
    #[error(transparent)]
    Lexical(#[from] LexicalError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    Dense,
    Lexical,
    Multi,
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Signal::Dense => "dense",
            Signal::Lexical => "lexical",
            Signal::Multi => "multi",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub w_dense: f64,
    pub w_lex: f64,
    pub w_multi: f64,
}

impl Default for FusionWeights {
    /// Dense 0.4, lexical 0.2, multi-vector 0.4.
    fn default() -> Self {
        Self {
            w_dense: 0.4,
            w_lex: 0.2,
            w_multi: 0.4,
        }
    }
}

impl FusionWeights {
    pub fn new(w_dense: f64, w_lex: f64, w_multi: f64) -> Result<Self, HybridError> {
        let w = Self {
            w_dense,
            w_lex,
            w_multi,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), HybridError> {
        for (name, v) in [
            ("w_dense", self.w_dense),
            ("w_lex", self.w_lex),
            ("w_multi", self.w_multi),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(HybridError::InvalidWeights(format!("{name} = {v}")));
            }
        }
        if self.total() <= 0.0 {
            return Err(HybridError::InvalidWeights("weights sum to zero".into()));
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.w_dense + self.w_lex + self.w_multi
    }

    pub fn weight(&self, signal: Signal) -> f64 {
        match signal {
            Signal::Dense => self.w_dense,
            Signal::Lexical => self.w_lex,
            Signal::Multi => self.w_multi,
        }
    }

    pub fn uses(&self, signal: Signal) -> bool {
        self.weight(signal) > 0.0
    }
}

impl std::str::FromStr for FusionWeights {
    type Err = HybridError;

    /// Parses `dense,lex,multi`, e.g. `0.4,0.2,0.4`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [d, l, m] = parts.as_slice() else {
            return Err(HybridError::InvalidWeights(format!(
                "expected three comma-separated weights, got {s:?}"
            )));
        };
        let parse = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| HybridError::InvalidWeights(format!("not a number: {v:?}")))
        };
        Self::new(parse(d)?, parse(l)?, parse(m)?)
    }
}

/// Normalised per-candidate signals. `None` marks a signal that was not computed.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SignalVector {
    pub dense: Option<f64>,
    pub lexical: Option<f64>,
    pub multi: Option<f64>,
}

impl SignalVector {
    pub fn new(dense: f64, lexical: f64, multi: f64) -> Self {
        Self {
            dense: Some(dense),
            lexical: Some(lexical),
            multi: Some(multi),
        }
    }

    pub fn get(&self, signal: Signal) -> Option<f64> {
        match signal {
            Signal::Dense => self.dense,
            Signal::Lexical => self.lexical,
            Signal::Multi => self.multi,
        }
    }
}

/// Late-interaction score: mean over query rows of the best dot product
/// against any document row.
pub fn max_sim(query: &TokenMatrix, doc: &TokenMatrix) -> Result<f64, HybridError> {
    if query.dim() != doc.dim() {
        return Err(HybridError::DimensionMismatch(query.dim(), doc.dim()));
    }
    if query.rows() == 0 || doc.rows() == 0 {
        return Err(HybridError::EmptyMatrix);
    }
    let mut total = 0.0;
    for q in query.iter_rows() {
        total += best_dot(q, doc);
    }
    Ok(total / query.rows() as f64)
}

/// Largest `dot(q, row)` over the rows of `doc`. Four rows are processed per
/// pass so their independent accumulation chains overlap; each chain still
/// sums in ascending index order, so every value equals [`dot`] exactly.
fn best_dot(q: &[f32], doc: &TokenMatrix) -> f64 {
    let dim = doc.dim();
    let data = doc.as_slice();
    let rows = doc.rows();
    let mut best = f64::NEG_INFINITY;
    let mut r = 0;
    while r + 4 <= rows {
        let block = &data[r * dim..(r + 4) * dim];
        let (d0, rest) = block.split_at(dim);
        let (d1, rest) = rest.split_at(dim);
        let (d2, d3) = rest.split_at(dim);
        let mut acc = [0.0f64; 4];
        for i in 0..dim {
            let x = f64::from(q[i]);
            acc[0] += x * f64::from(d0[i]);
            acc[1] += x * f64::from(d1[i]);
            acc[2] += x * f64::from(d2[i]);
            acc[3] += x * f64::from(d3[i]);
        }
        for s in acc {
            if s > best {
                best = s;
            }
        }
        r += 4;
    }
    for row in r..rows {
        let s = dot(q, doc.row(row));
        if s > best {
            best = s;
        }
    }
    best
}

/// Min-max normalisation within one candidate pool. A constant pool maps to 1.
pub fn normalise_signals(raw: &[f64]) -> Vec<f64> {
    let Some(&first) = raw.first() else {
        return Vec::new();
    };
    let (lo, hi) = raw
        .iter()
        .fold((first, first), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if hi == lo {
        return vec![1.0; raw.len()];
    }
    let span = hi - lo;
    raw.iter().map(|&x| ((x - lo) / span).clamp(0.0, 1.0)).collect()
}

/// Weighted mean of the normalised signals. Zero-weight signals may be absent.
pub fn fuse(s: &SignalVector, w: &FusionWeights) -> Result<f64, HybridError> {
    let mut acc = 0.0;
    for signal in [Signal::Dense, Signal::Lexical, Signal::Multi] {
        let weight = w.weight(signal);
        if weight == 0.0 {
            continue;
        }
        let value = s.get(signal).ok_or(HybridError::MissingSignal(signal))?;
        acc += weight * value;
    }
    Ok(acc / w.total())
}

/// Raw (un-normalised) signals for one candidate pool.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawSignals {
    pub dense: Option<Vec<f64>>,
    pub lexical: Option<Vec<f64>>,
    pub multi: Option<Vec<f64>>,
}

/// Hybrid scorer over a code-list corpus. Components are optional; only the
/// ones with positive weight are required.
pub struct HybridScorer<'a> {
    corpus: &'a Corpus,
    lexical: Option<&'a Bm25Scorer<'a>>,
    store: Option<&'a EmbeddingStore>,
    weights: FusionWeights,
    universe: Vec<QuestionId>,
}

impl<'a> HybridScorer<'a> {
    pub fn new(
        corpus: &'a Corpus,
        lexical: Option<&'a Bm25Scorer<'a>>,
        store: Option<&'a EmbeddingStore>,
        weights: FusionWeights,
    ) -> Result<Self, HybridError> {
        weights.validate()?;
        if weights.uses(Signal::Lexical) && lexical.is_none() {
            return Err(HybridError::MissingSignal(Signal::Lexical));
        }
        if weights.uses(Signal::Dense) && store.is_none() {
            return Err(HybridError::MissingSignal(Signal::Dense));
        }
        if weights.uses(Signal::Multi) && !store.is_some_and(EmbeddingStore::has_token_level) {
            return Err(HybridError::MissingSignal(Signal::Multi));
        }
        Ok(Self {
            corpus,
            lexical,
            store,
            weights,
            universe: corpus.sorted_ids(),
        })
    }

    pub fn weights(&self) -> FusionWeights {
        self.weights
    }

    fn query_tokens(&self, scorer: &Bm25Scorer<'_>, query: &QuestionId) -> Result<Vec<String>, HybridError> {
        let q = self
            .corpus
            .get(query)
            .ok_or_else(|| HybridError::UnknownQuestion(query.clone()))?;
        Ok(scorer.index().analyze(&build_input_sequence(q)?))
    }

    /// Computes every positively weighted signal for `candidates`.
    pub fn raw_signals(
        &self,
        query: &QuestionId,
        candidates: &[QuestionId],
    ) -> Result<RawSignals, HybridError> {
        let mut raw = RawSignals::default();
        if let (true, Some(scorer)) = (self.weights.uses(Signal::Lexical), self.lexical) {
            let tokens = self.query_tokens(scorer, query)?;
            raw.lexical = Some(
                candidates
                    .iter()
                    .map(|c| scorer.score(&tokens, c))
                    .collect::<Result<_, _>>()?,
            );
        }
        if let Some(store) = self.store {
            if self.weights.uses(Signal::Dense) {
                raw.dense = Some(
                    candidates
                        .iter()
                        .map(|c| store.distance(query, c).map(|d| 1.0 - d))
                        .collect::<Result<_, _>>()?,
                );
            }
            if self.weights.uses(Signal::Multi) {
                let q = store.tokens(query)?;
                raw.multi = Some(
                    candidates
                        .iter()
                        .map(|c| max_sim(q, store.tokens(c)?))
                        .collect::<Result<_, _>>()?,
                );
            }
        }
        Ok(raw)
    }

    /// Fused scores for `candidates`, normalised within this pool.
    pub fn score_pool(
        &self,
        query: &QuestionId,
        candidates: &[QuestionId],
    ) -> Result<Vec<f64>, HybridError> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let raw = self.raw_signals(query, candidates)?;
        let dense = raw.dense.as_deref().map(normalise_signals);
        let lexical = raw.lexical.as_deref().map(normalise_signals);
        let multi = raw.multi.as_deref().map(normalise_signals);
        (0..candidates.len())
            .map(|i| {
                let s = SignalVector {
                    dense: dense.as_ref().map(|v| v[i]),
                    lexical: lexical.as_ref().map(|v| v[i]),
                    multi: multi.as_ref().map(|v| v[i]),
                };
                fuse(&s, &self.weights)
            })
            .collect()
    }

    /// Ranks every corpus question other than the query and `exclude` by fused
    /// score, descending, ties by ascending id.
    pub fn top_k(
        &self,
        query: &QuestionId,
        k: usize,
        exclude: &HashSet<QuestionId>,
    ) -> Result<Vec<(QuestionId, f64)>, HybridError> {
        if !self.corpus.contains(query) {
            return Err(HybridError::UnknownQuestion(query.clone()));
        }
        let pool: Vec<(u32, &QuestionId)> = self
            .universe
            .iter()
            .enumerate()
            .filter(|(_, id)| *id != query && !exclude.contains(*id))
            .map(|(rank, id)| (rank as u32, id))
            .collect();
        let ids: Vec<QuestionId> = pool.iter().map(|(_, id)| (*id).clone()).collect();
        let scores = self.score_pool(query, &ids)?;
        let mut top = TopK::new(k);
        for ((rank, _), score) in pool.iter().zip(scores) {
            top.push(Scored { score, rank: *rank });
        }
        Ok(top
            .into_sorted()
            .into_iter()
            .map(|s| (self.universe[s.rank as usize].clone(), s.score))
            .collect())
    }
}

/// Ranks stored questions by raw MaxSim against the query, descending, ties by
/// ascending id. The query itself is always excluded.
pub fn multi_vector_top_k(
    query: &QuestionId,
    k: usize,
    exclude: &HashSet<QuestionId>,
    store: &EmbeddingStore,
) -> Result<Vec<(QuestionId, f64)>, HybridError> {
    let q = store.tokens(query)?;
    let mut ids: Vec<&QuestionId> = store.records().iter().map(|r| &r.question_id).collect();
    ids.sort();
    let mut top = TopK::new(k);
    for (rank, id) in ids.iter().enumerate() {
        if *id == query || exclude.contains(*id) {
            continue;
        }
        top.push(Scored {
            score: max_sim(q, store.tokens(id)?)?,
            rank: rank as u32,
        });
    }
    Ok(top
        .into_sorted()
        .into_iter()
        .map(|s| (ids[s.rank as usize].clone(), s.score))
        .collect())
}
