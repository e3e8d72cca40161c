//! On-disk index cache.
//!
//! Layout (little-endian): magic `HBMI`, version u16, analyzer flags u8
//! (bit 0: stopwords removed), doc count u64, term count u64; then per doc
//! `id_len u32, id bytes, length u32`; then per term
//! `term_len u32, term bytes, posting count u32, (doc u32, tf u32)*`.

use super::index::{InvertedIndex, Posting};
use super::tokenize::Analyzer;
use super::LexicalError;
use crate::bytes::{put_u16, put_u32, put_u64, ByteReader, Truncated};
use crate::corpus::QuestionId;

pub const INDEX_MAGIC: &[u8; 4] = b"HBMI";
pub const INDEX_VERSION: u16 = 1;

impl From<Truncated> for LexicalError {
    fn from(_: Truncated) -> Self {
        LexicalError::CorruptCache("truncated".into())
    }
}

pub fn write_index(index: &InvertedIndex) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(INDEX_MAGIC);
    put_u16(&mut out, INDEX_VERSION);
    out.push(u8::from(index.analyzer.remove_stopwords));
    put_u64(&mut out, index.doc_ids.len() as u64);
    put_u64(&mut out, index.terms.len() as u64);
    for (id, &len) in index.doc_ids.iter().zip(&index.doc_lengths) {
        put_u32(&mut out, id.0.len() as u32);
        out.extend_from_slice(id.0.as_bytes());
        put_u32(&mut out, len);
    }
    for (term, list) in index.terms.iter().zip(&index.postings) {
        put_u32(&mut out, term.len() as u32);
        out.extend_from_slice(term.as_bytes());
        put_u32(&mut out, list.len() as u32);
        for p in list {
            put_u32(&mut out, p.doc);
            put_u32(&mut out, p.tf);
        }
    }
    out
}

fn corrupt(msg: impl Into<String>) -> LexicalError {
    LexicalError::CorruptCache(msg.into())
}

fn read_string(r: &mut ByteReader<'_>) -> Result<String, LexicalError> {
    let len = r.u32()? as usize;
    let bytes = r.take(len)?;
    String::from_utf8(bytes.to_vec()).map_err(|_| corrupt("invalid utf-8"))
}

pub fn read_index(bytes: &[u8]) -> Result<InvertedIndex, LexicalError> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != INDEX_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u16()?;
    if version != INDEX_VERSION {
        return Err(LexicalError::CacheVersion(version));
    }
    let flags = r.u8()?;
    if flags > 1 {
        return Err(corrupt(format!("unknown analyzer flags {flags:#x}")));
    }
    let analyzer = Analyzer {
        remove_stopwords: flags & 1 == 1,
    };
    let doc_count = r.u64()? as usize;
    let term_count = r.u64()? as usize;
    if doc_count == 0 {
        return Err(LexicalError::EmptyCorpus);
    }
    // Each doc needs at least 8 bytes, each term at least 8.
    if doc_count.saturating_add(term_count).saturating_mul(8) > r.remaining() {
        return Err(corrupt("truncated"));
    }
    let mut doc_ids: Vec<QuestionId> = Vec::with_capacity(doc_count);
    let mut doc_lengths = Vec::with_capacity(doc_count);
    for _ in 0..doc_count {
        let id = QuestionId(read_string(&mut r)?);
        if doc_ids.last().is_some_and(|prev| prev >= &id) {
            return Err(corrupt("document ids not strictly ascending"));
        }
        doc_ids.push(id);
        doc_lengths.push(r.u32()?);
    }
    let mut terms: Vec<String> = Vec::with_capacity(term_count);
    let mut postings = Vec::with_capacity(term_count);
    let mut tf_totals = vec![0u64; doc_count];
    for _ in 0..term_count {
        let term = read_string(&mut r)?;
        if terms.last().is_some_and(|prev| prev >= &term) {
            return Err(corrupt("terms not strictly ascending"));
        }
        let n = r.u32()? as usize;
        if n == 0 || n > doc_count {
            return Err(corrupt(format!("posting list length {n}")));
        }
        let mut list = Vec::with_capacity(n);
        for _ in 0..n {
            let doc = r.u32()?;
            let tf = r.u32()?;
            if doc as usize >= doc_count || tf == 0 {
                return Err(corrupt("posting out of range"));
            }
            if list.last().is_some_and(|p: &Posting| p.doc >= doc) {
                return Err(corrupt("postings not sorted"));
            }
            tf_totals[doc as usize] += tf as u64;
            list.push(Posting { doc, tf });
        }
        terms.push(term);
        postings.push(list);
    }
    if r.remaining() != 0 {
        return Err(corrupt("trailing bytes"));
    }
    if tf_totals
        .iter()
        .zip(&doc_lengths)
        .any(|(&total, &len)| total != len as u64)
    {
        return Err(corrupt("document lengths disagree with postings"));
    }
    Ok(InvertedIndex::assemble(
        analyzer,
        doc_ids,
        doc_lengths,
        terms,
        postings,
    ))
}
