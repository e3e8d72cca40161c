//! End-to-end ranking and top-depth re-ranking, producing [`RankingRun`]s.

mod exchange;
mod run;

use std::cell::RefCell;
use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::{build_input_sequence, Corpus, CorpusError, QuestionId};
use crate::embedding::{EmbeddingError, EmbeddingStore};
use crate::fingerprint::corpus_fingerprint;
use crate::hybrid::{HybridError, HybridScorer};
use crate::lexical::{Bm25Scorer, LexicalError};

pub use exchange::{manifest_pairs, read_manifest, write_manifest, ExternalScores, Pair};
pub use run::{derive_run_id, Candidate, ModelKind, RankingRun, RunMode, RUN_FORMAT, RUN_VERSION};

/// Default number of base candidates handed to a re-ranker.
pub const DEFAULT_RERANK_DEPTH: usize = 50;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("no usable base run: {0}")]
    MissingBaseRun(String),
    #[error("scorer failed on ({query}, {candidate}): {reason}")]
    ScorerFailure {
        query: QuestionId,
        candidate: QuestionId,
        reason: String,
    },
    #[error("pair ({query}, {candidate}) does not match the manifest")]
    UnmatchedPair {
        query: QuestionId,
        candidate: QuestionId,
    },
    #[error("unknown question {0}")]
    UnknownQuestion(QuestionId),
    #[error("invalid run: {0}")]
    InvalidRun(String),
    #[error("bad run file, line {line}: {reason}")]
    BadRunFile { line: usize, reason: String },
    #[error("bad pair file, line {line}: {reason}")]
    BadScoreFile { line: usize, reason: String },
    #[error("worker pool: {0}")]
    Workers(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Lexical(#[from] LexicalError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Hybrid(#[from] HybridError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// A first-stage model that ranks the whole corpus for a query, excluding the
/// query itself. Scores are higher-is-better.
pub trait Ranker: Sync {
    fn model(&self) -> ModelKind;
    fn describe(&self) -> Value;
    fn rank(&self, query: &QuestionId, k: usize) -> Result<Vec<(QuestionId, f64)>, PipelineError>;
}

/// Scores (query, candidate) pairs, higher is better. Must be deterministic.
pub trait PairScorer: Sync {
    fn model(&self) -> ModelKind;
    fn describe(&self) -> Value;
    fn score(&self, query: &QuestionId, candidate: &QuestionId) -> Result<f64, PipelineError>;

    /// Scores a whole candidate pool. Scorers that normalise within the pool override this.
    fn score_pool(
        &self,
        query: &QuestionId,
        candidates: &[QuestionId],
    ) -> Result<Vec<f64>, PipelineError> {
        candidates.iter().map(|c| self.score(query, c)).collect()
    }
}

/// Adapts a closure into a [`PairScorer`].
pub struct FnScorer<F> {
    name: String,
    f: F,
}

impl<F> FnScorer<F>
where
    F: Fn(&QuestionId, &QuestionId) -> f64 + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            name: name.into(),
            f,
        }
    }
}

impl<F> PairScorer for FnScorer<F>
where
    F: Fn(&QuestionId, &QuestionId) -> f64 + Sync,
{
    fn model(&self) -> ModelKind {
        ModelKind::External
    }

    fn describe(&self) -> Value {
        json!({ "scorer": self.name })
    }

    fn score(&self, query: &QuestionId, candidate: &QuestionId) -> Result<f64, PipelineError> {
        Ok((self.f)(query, candidate))
    }
}

thread_local! {
    static BM25_ACC: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

pub struct Bm25Model<'a> {
    corpus: &'a Corpus,
    scorer: Bm25Scorer<'a>,
}

impl<'a> Bm25Model<'a> {
    pub fn new(corpus: &'a Corpus, scorer: Bm25Scorer<'a>) -> Self {
        Self { corpus, scorer }
    }

    pub fn scorer(&self) -> &Bm25Scorer<'a> {
        &self.scorer
    }

    fn query_tokens(&self, query: &QuestionId) -> Result<Vec<String>, PipelineError> {
        let q = self
            .corpus
            .get(query)
            .ok_or_else(|| PipelineError::UnknownQuestion(query.clone()))?;
        Ok(self.scorer.index().analyze(&build_input_sequence(q)?))
    }
}

impl Ranker for Bm25Model<'_> {
    fn model(&self) -> ModelKind {
        ModelKind::Bm25
    }

    fn describe(&self) -> Value {
        let p = self.scorer.params();
        json!({
            "model": "bm25",
            "k1": p.k1,
            "b": p.b,
            "remove_stopwords": self.scorer.index().analyzer().remove_stopwords,
        })
    }

    fn rank(&self, query: &QuestionId, k: usize) -> Result<Vec<(QuestionId, f64)>, PipelineError> {
        let tokens = self.query_tokens(query)?;
        let exclude: HashSet<QuestionId> = [query.clone()].into_iter().collect();
        Ok(BM25_ACC.with(|acc| {
            self.scorer
                .retrieve_top_k_with(&tokens, k, &exclude, &mut acc.borrow_mut())
        }))
    }
}

impl PairScorer for Bm25Model<'_> {
    fn model(&self) -> ModelKind {
        ModelKind::Bm25
    }

    fn describe(&self) -> Value {
        Ranker::describe(self)
    }

    fn score(&self, query: &QuestionId, candidate: &QuestionId) -> Result<f64, PipelineError> {
        let tokens = self.query_tokens(query)?;
        Ok(self.scorer.score(&tokens, candidate)?)
    }

    fn score_pool(
        &self,
        query: &QuestionId,
        candidates: &[QuestionId],
    ) -> Result<Vec<f64>, PipelineError> {
        let tokens = self.query_tokens(query)?;
        candidates
            .iter()
            .map(|c| Ok(self.scorer.score(&tokens, c)?))
            .collect()
    }
}

/// Bi-encoder retrieval; the reported score is cosine similarity (1 - distance).
pub struct DenseModel<'a> {
    store: &'a EmbeddingStore,
}

impl<'a> DenseModel<'a> {
    pub fn new(store: &'a EmbeddingStore) -> Self {
        Self { store }
    }
}

impl Ranker for DenseModel<'_> {
    fn model(&self) -> ModelKind {
        ModelKind::Dense
    }

    fn describe(&self) -> Value {
        json!({
            "model": "dense",
            "model_tag": self.store.model_tag(),
            "rep_kind": self.store.rep_kind(),
            "dim": self.store.dim(),
        })
    }

    fn rank(&self, query: &QuestionId, k: usize) -> Result<Vec<(QuestionId, f64)>, PipelineError> {
        Ok(self
            .store
            .dense_top_k(query, k, &HashSet::new())?
            .into_iter()
            .map(|(id, d)| (id, 1.0 - d))
            .collect())
    }
}

impl PairScorer for DenseModel<'_> {
    fn model(&self) -> ModelKind {
        ModelKind::Dense
    }

    fn describe(&self) -> Value {
        Ranker::describe(self)
    }

    fn score(&self, query: &QuestionId, candidate: &QuestionId) -> Result<f64, PipelineError> {
        Ok(1.0 - self.store.distance(query, candidate)?)
    }
}

pub struct HybridModel<'a> {
    scorer: HybridScorer<'a>,
    components: Value,
}

impl<'a> HybridModel<'a> {
    pub fn new(
        scorer: HybridScorer<'a>,
        lexical: Option<&Bm25Scorer<'_>>,
        store: Option<&EmbeddingStore>,
    ) -> Self {
        let components = json!({
            "bm25": lexical.map(|s| json!({
                "k1": s.params().k1,
                "b": s.params().b,
                "remove_stopwords": s.index().analyzer().remove_stopwords,
            })),
            "embeddings": store.map(|s| json!({
                "model_tag": s.model_tag(),
                "rep_kind": s.rep_kind(),
                "dim": s.dim(),
                "token_level": s.has_token_level(),
            })),
        });
        Self { scorer, components }
    }
}

impl Ranker for HybridModel<'_> {
    fn model(&self) -> ModelKind {
        ModelKind::Hybrid
    }

    fn describe(&self) -> Value {
        let w = self.scorer.weights();
        json!({
            "model": "hybrid",
            "fusion": {"w_dense": w.w_dense, "w_lex": w.w_lex, "w_multi": w.w_multi},
            "normalisation": "min-max per query pool",
            "components": self.components,
        })
    }

    fn rank(&self, query: &QuestionId, k: usize) -> Result<Vec<(QuestionId, f64)>, PipelineError> {
        Ok(self.scorer.top_k(query, k, &HashSet::new())?)
    }
}

impl PairScorer for HybridModel<'_> {
    fn model(&self) -> ModelKind {
        ModelKind::Hybrid
    }

    fn describe(&self) -> Value {
        Ranker::describe(self)
    }

    fn score(&self, query: &QuestionId, candidate: &QuestionId) -> Result<f64, PipelineError> {
        Ok(self.scorer.score_pool(query, std::slice::from_ref(candidate))?[0])
    }

    fn score_pool(
        &self,
        query: &QuestionId,
        candidates: &[QuestionId],
    ) -> Result<Vec<f64>, PipelineError> {
        Ok(self.scorer.score_pool(query, candidates)?)
    }
}

/// Runs `job` over `items` on `workers` threads, keeping input order.
fn run_sharded<T, R, F>(items: &[T], workers: usize, job: F) -> Result<Vec<R>, PipelineError>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R, PipelineError> + Sync,
{
    if workers <= 1 {
        return items.iter().map(job).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::Workers(e.to_string()))?;
    pool.install(|| items.par_iter().map(&job).collect())
}

/// Leave-one-out ranking: every code-list question queries all the others.
pub fn end_to_end_rank(
    ranker: &dyn Ranker,
    corpus: &Corpus,
    k: usize,
    workers: usize,
) -> Result<RankingRun, PipelineError> {
    if k == 0 {
        return Err(PipelineError::InvalidK);
    }
    let code_list = corpus.filter_code_list();
    let queries = code_list.sorted_ids();
    let lists = run_sharded(&queries, workers, |q| {
        let hits = ranker.rank(q, k)?;
        for (c, _) in &hits {
            if c == q || !code_list.contains(c) {
                return Err(PipelineError::InvalidRun(format!(
                    "ranker returned {c} for query {q}"
                )));
            }
        }
        Ok(hits
            .into_iter()
            .map(|(id, score)| Candidate { id, score })
            .collect::<Vec<_>>())
    })?;
    let config = json!({
        "ranker": ranker.describe(),
        "corpus_fingerprint": corpus_fingerprint(&code_list),
        "queries": queries.len(),
    });
    let per_query: BTreeMap<QuestionId, Vec<Candidate>> = queries.into_iter().zip(lists).collect();
    let run = RankingRun::new(ranker.model(), RunMode::EndToEnd, k, per_query, config);
    run.validate()?;
    Ok(run)
}

/// Re-scores each query's top-`depth` base candidates and keeps the best `k`.
/// Sorting is stable, so equal scores keep their base order.
pub fn rerank(
    base: &RankingRun,
    scorer: &dyn PairScorer,
    depth: usize,
    k: usize,
    workers: usize,
) -> Result<RankingRun, PipelineError> {
    if k == 0 {
        return Err(PipelineError::InvalidK);
    }
    if base.mode != RunMode::EndToEnd {
        return Err(PipelineError::MissingBaseRun(format!(
            "base run {} is a {} run, expected end_to_end",
            base.run_id, base.mode
        )));
    }
    let queries: Vec<(&QuestionId, &Vec<Candidate>)> = base.per_query.iter().collect();
    let lists = run_sharded(&queries, workers, |(q, list)| {
        let pool: Vec<QuestionId> = list.iter().take(depth).map(|c| c.id.clone()).collect();
        let scores = scorer.score_pool(q, &pool)?;
        if scores.len() != pool.len() {
            return Err(PipelineError::ScorerFailure {
                query: (*q).clone(),
                candidate: pool.first().cloned().unwrap_or_else(|| QuestionId::new("")),
                reason: format!("{} scores for {} candidates", scores.len(), pool.len()),
            });
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(PipelineError::ScorerFailure {
                query: (*q).clone(),
                candidate: pool[i].clone(),
                reason: "non-finite score".into(),
            });
        }
        let mut rescored: Vec<Candidate> = pool
            .into_iter()
            .zip(scores)
            .map(|(id, score)| Candidate { id, score })
            .collect();
        rescored.sort_by(|a, b| b.score.total_cmp(&a.score));
        rescored.truncate(k);
        Ok(rescored)
    })?;
    let config = json!({
        "base_run": base.run_id,
        "base_model": base.model,
        "depth": depth,
        "scorer": scorer.describe(),
    });
    let per_query = queries
        .into_iter()
        .map(|(q, _)| q.clone())
        .zip(lists)
        .collect();
    let run = RankingRun::new(scorer.model(), RunMode::Rerank, k, per_query, config);
    run.validate()?;
    Ok(run)
}
