use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::tokenize::Analyzer;
use super::LexicalError;
use crate::corpus::{build_input_sequence, Corpus, QuestionId};
use crate::topk::{Scored, TopK};

/// BM25 free parameters. Defaults are the common library defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.5, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self, LexicalError> {
        let params = Self { k1, b };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), LexicalError> {
        if !(self.k1.is_finite() && self.k1 >= 0.0) {
            return Err(LexicalError::InvalidParams(format!("k1 = {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(LexicalError::InvalidParams(format!("b = {}", self.b)));
        }
        Ok(())
    }
}

/// Non-negative idf: `ln(1 + (N - n + 0.5) / (n + 0.5))`.
#[inline]
pub fn idf(doc_count: usize, doc_freq: usize) -> f64 {
    let n = doc_count as f64;
    let df = doc_freq as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// One term's contribution to a document score.
#[inline]
pub fn term_score(idf: f64, tf: u32, doc_len: u32, avg_doc_len: f64, params: Bm25Params) -> f64 {
    if tf == 0 {
        return 0.0;
    }
    let tf = tf as f64;
    let norm = 1.0 - params.b + params.b * doc_len as f64 / avg_doc_len;
    idf * (tf * (params.k1 + 1.0)) / (tf + params.k1 * norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    /// Position of the document in ascending-id order.
    pub doc: u32,
    pub tf: u32,
}

/// Inverted index over question input sequences. Documents are numbered in
/// ascending question-id order, terms in ascending lexical order, so two
/// builds over the same corpus are identical.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    pub(crate) analyzer: Analyzer,
    pub(crate) doc_ids: Vec<QuestionId>,
    pub(crate) doc_lengths: Vec<u32>,
    pub(crate) terms: Vec<String>,
    pub(crate) postings: Vec<Vec<Posting>>,
    avg_doc_length: f64,
    doc_pos: HashMap<QuestionId, u32>,
    term_pos: HashMap<String, u32>,
}

impl InvertedIndex {
    /// Indexes `build_input_sequence` of every question in the corpus.
    pub fn build(corpus: &Corpus, analyzer: Analyzer) -> Result<Self, LexicalError> {
        let docs = corpus
            .iter()
            .map(|q| Ok((q.id.clone(), build_input_sequence(q)?)))
            .collect::<Result<Vec<_>, crate::corpus::CorpusError>>()?;
        Self::from_documents(docs, analyzer)
    }

    pub fn from_documents(
        mut docs: Vec<(QuestionId, String)>,
        analyzer: Analyzer,
    ) -> Result<Self, LexicalError> {
        if docs.is_empty() {
            return Err(LexicalError::EmptyCorpus);
        }
        docs.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = docs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(LexicalError::DuplicateDoc(w[0].0.clone()));
        }
        let mut vocab: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(docs.len());
        let mut counts: HashMap<String, u32> = HashMap::new();
        for (doc, (_, text)) in docs.iter().enumerate() {
            let tokens = analyzer.analyze(text);
            doc_lengths.push(tokens.len() as u32);
            counts.clear();
            for t in tokens {
                *counts.entry(t).or_insert(0) += 1;
            }
            for (term, &tf) in &counts {
                let posting = Posting {
                    doc: doc as u32,
                    tf,
                };
                match vocab.get_mut(term) {
                    Some(list) => list.push(posting),
                    None => {
                        vocab.insert(term.clone(), vec![posting]);
                    }
                }
            }
        }
        let doc_ids = docs.into_iter().map(|(id, _)| id).collect();
        let (terms, postings) = vocab.into_iter().unzip();
        Ok(Self::assemble(analyzer, doc_ids, doc_lengths, terms, postings))
    }

    /// Builds lookup tables. Inputs must already satisfy the index invariants.
    pub(crate) fn assemble(
        analyzer: Analyzer,
        doc_ids: Vec<QuestionId>,
        doc_lengths: Vec<u32>,
        terms: Vec<String>,
        postings: Vec<Vec<Posting>>,
    ) -> Self {
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = total as f64 / doc_lengths.len() as f64;
        let doc_pos = doc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        let term_pos = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            analyzer,
            doc_ids,
            doc_lengths,
            terms,
            postings,
            avg_doc_length,
            doc_pos,
            term_pos,
        }
    }

    pub fn analyzer(&self) -> Analyzer {
        self.analyzer
    }

    /// Tokenizes text the same way documents were tokenized.
    pub fn analyze(&self, text: &str) -> Vec<String> {
        self.analyzer.analyze(text)
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_ids(&self) -> &[QuestionId] {
        &self.doc_ids
    }

    pub fn contains(&self, id: &QuestionId) -> bool {
        self.doc_pos.contains_key(id)
    }

    pub fn doc_length(&self, id: &QuestionId) -> Option<u32> {
        self.doc_pos.get(id).map(|&d| self.doc_lengths[d as usize])
    }

    pub fn vocabulary_size(&self) -> usize {
        self.terms.len()
    }

    /// Postings for a term, sorted by document position.
    pub fn postings(&self, term: &str) -> Option<&[Posting]> {
        self.term_pos
            .get(term)
            .map(|&t| self.postings[t as usize].as_slice())
    }

    pub(crate) fn doc_position(&self, id: &QuestionId) -> Option<u32> {
        self.doc_pos.get(id).copied()
    }

    fn term_frequency(&self, term: u32, doc: u32) -> u32 {
        let list = &self.postings[term as usize];
        list.binary_search_by_key(&doc, |p| p.doc)
            .map(|i| list[i].tf)
            .unwrap_or(0)
    }

    /// BM25 score of one document. Repeated query terms count once per occurrence.
    pub fn bm25_score(
        &self,
        query_tokens: &[String],
        doc_id: &QuestionId,
        params: Bm25Params,
    ) -> Result<f64, LexicalError> {
        let doc = self
            .doc_position(doc_id)
            .ok_or_else(|| LexicalError::UnknownDoc(doc_id.clone()))?;
        let len = self.doc_lengths[doc as usize];
        let mut score = 0.0;
        for token in query_tokens {
            let Some(&term) = self.term_pos.get(token.as_str()) else {
                continue;
            };
            let tf = self.term_frequency(term, doc);
            if tf > 0 {
                let idf = idf(self.doc_count(), self.postings[term as usize].len());
                score += term_score(idf, tf, len, self.avg_doc_length, params);
            }
        }
        Ok(score)
    }
}

/// Query-time BM25 evaluator with per-posting weights precomputed for one
/// parameter setting. Scores are accumulated term-at-a-time in query order.
#[derive(Clone)]
pub struct Bm25Scorer<'a> {
    index: &'a InvertedIndex,
    params: Bm25Params,
    weights: Vec<Vec<f64>>,
}

impl<'a> Bm25Scorer<'a> {
    pub fn new(index: &'a InvertedIndex, params: Bm25Params) -> Result<Self, LexicalError> {
        params.validate()?;
        let n = index.doc_count();
        let avg = index.avg_doc_length;
        let weights = index
            .postings
            .iter()
            .map(|list| {
                let idf = idf(n, list.len());
                list.iter()
                    .map(|p| term_score(idf, p.tf, index.doc_lengths[p.doc as usize], avg, params))
                    .collect()
            })
            .collect();
        Ok(Self {
            index,
            params,
            weights,
        })
    }

    pub fn index(&self) -> &'a InvertedIndex {
        self.index
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    /// Scores every document into `acc` (resized to the document count).
    pub fn accumulate(&self, query_tokens: &[String], acc: &mut Vec<f64>) {
        acc.clear();
        acc.resize(self.index.doc_count(), 0.0);
        for token in query_tokens {
            let Some(&term) = self.index.term_pos.get(token.as_str()) else {
                continue;
            };
            let list = &self.index.postings[term as usize];
            let weights = &self.weights[term as usize];
            for (p, &w) in list.iter().zip(weights) {
                acc[p.doc as usize] += w;
            }
        }
    }

    pub fn score(&self, query_tokens: &[String], doc_id: &QuestionId) -> Result<f64, LexicalError> {
        self.index.bm25_score(query_tokens, doc_id, self.params)
    }

    /// The `k` highest-scoring documents outside `exclude`, best first, ties by
    /// ascending id. Zero-score documents are still candidates.
    pub fn retrieve_top_k(
        &self,
        query_tokens: &[String],
        k: usize,
        exclude: &HashSet<QuestionId>,
    ) -> Vec<(QuestionId, f64)> {
        let mut acc = Vec::new();
        self.retrieve_top_k_with(query_tokens, k, exclude, &mut acc)
    }

    /// As [`Self::retrieve_top_k`], reusing a caller-owned accumulator buffer.
    pub fn retrieve_top_k_with(
        &self,
        query_tokens: &[String],
        k: usize,
        exclude: &HashSet<QuestionId>,
        acc: &mut Vec<f64>,
    ) -> Vec<(QuestionId, f64)> {
        self.accumulate(query_tokens, acc);
        let skip: HashSet<u32> = exclude
            .iter()
            .filter_map(|id| self.index.doc_position(id))
            .collect();
        let mut top = TopK::new(k);
        for (doc, &score) in acc.iter().enumerate() {
            let doc = doc as u32;
            if !skip.contains(&doc) {
                top.push(Scored { score, rank: doc });
            }
        }
        top.into_sorted()
            .into_iter()
            .map(|s| (self.index.doc_ids[s.rank as usize].clone(), s.score))
            .collect()
    }
}

/// One-shot convenience over [`Bm25Scorer`]; batch callers should keep a scorer.
pub fn retrieve_top_k(
    query_tokens: &[String],
    k: usize,
    exclude: &HashSet<QuestionId>,
    index: &InvertedIndex,
    params: Bm25Params,
) -> Result<Vec<(QuestionId, f64)>, LexicalError> {
    Ok(Bm25Scorer::new(index, params)?.retrieve_top_k(query_tokens, k, exclude))
}
