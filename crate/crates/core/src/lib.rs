//! Retrieval and evaluation engine for finding conceptually equivalent
//! questions across longitudinal survey questionnaires.
//!
//! Each code-list question is turned into one retrieval document (its wording
//! followed by its coded response options). Questions are then ranked against
//! each other with BM25, precomputed dense embeddings, late-interaction MaxSim
//! or a weighted fusion of the three, optionally re-ranking BM25's top
//! candidates. Runs are evaluated by whether the rank-1 match shares the
//! query's top-level topic code, and sampled for specialist review.

mod bytes;
pub mod corpus;
pub mod embedding;
pub mod evaluation;
pub mod fingerprint;
pub mod hybrid;
pub mod lexical;
pub mod pipeline;
mod topk;

pub use corpus::{Corpus, Question, QuestionId};
