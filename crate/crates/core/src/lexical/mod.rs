//! BM25 lexical retrieval: tokenizer, inverted index, exact top-k and an
//! on-disk cache.

mod cache;
mod index;
mod tokenize;

use thiserror::Error;

use crate::corpus::{CorpusError, QuestionId};

pub use cache::{read_index, write_index, INDEX_MAGIC, INDEX_VERSION};
pub use index::{idf, retrieve_top_k, term_score, Bm25Params, Bm25Scorer, InvertedIndex, Posting};
pub use tokenize::{tokenize, Analyzer};

#[derive(Debug, Error, PartialEq)]
pub enum LexicalError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("unknown document {0}")]
    UnknownDoc(QuestionId),
    #[error("duplicate document {0}")]
    DuplicateDoc(QuestionId),
    #[error("invalid BM25 parameters: {0}")]
    InvalidParams(String),
    #[error("index cache version {0} is not supported")]
    CacheVersion(u16),
    #[error("corrupt index cache: {0}")]
    CorruptCache(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Free-function form of [`InvertedIndex::bm25_score`].
pub fn bm25_score(
    query_tokens: &[String],
    doc_id: &QuestionId,
    index: &InvertedIndex,
    params: Bm25Params,
) -> Result<f64, LexicalError> {
    index.bm25_score(query_tokens, doc_id, params)
}
