//! Precomputed question embeddings and exact cosine retrieval.
//!
//! HEMB layout (little-endian):
//!
//! ```text
//! magic "HEMB" | version u16 = 1 | flags u16 (bit 0: token matrices) | dim u32 | count u64
//! model_tag_len u16 | model_tag utf-8 | rep_kind u8 (0 mean, 1 sst)
//! count x { id_len u16 | id utf-8 | dim x f32 | [n_tokens u16 | n_tokens x dim x f32] }
//! ```
//!
//! Files carrying anything after the last record are rejected.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bytes::{put_f32s, put_u16, put_u32, put_u64, ByteReader, Truncated};
use crate::corpus::QuestionId;
use crate::topk::{Scored, TopK};

pub const HEMB_MAGIC: &[u8; 4] = b"HEMB";
pub const HEMB_VERSION: u16 = 1;
pub const FLAG_TOKENS: u16 = 1;

/// Vectors whose L2 norm is within this distance of 1 are stored unchanged.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported flags {0:#06x}")]
    UnsupportedFlags(u16),
    #[error("unknown rep_kind {0}")]
    BadRepKind(u8),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero-dimensional embeddings")]
    ZeroDimension,
    #[error("zero vector for {0}")]
    ZeroVector(QuestionId),
    #[error("cosine distance is undefined for a zero vector")]
    ZeroNorm,
    #[error("non-finite value in vector for {0}")]
    NonFinite(QuestionId),
    #[error("empty token matrix for {0}")]
    EmptyMatrix(QuestionId),
    #[error("token matrices must be present for every record or none")]
    MixedTokenLevel,
    #[error("duplicate record id {0}")]
    DuplicateId(QuestionId),
    #[error("invalid utf-8 in {0}")]
    InvalidUtf8(&'static str),
    #[error("file truncated")]
    TruncatedFile,
    #[error("{0} trailing bytes after last record")]
    TrailingBytes(usize),
    #[error("value out of range for the file format: {0}")]
    Unencodable(String),
    #[error("unknown question {0}")]
    UnknownQuestion(QuestionId),
    #[error("store has no token-level matrices")]
    NoTokenMatrices,
    #[error("io error: {0}")]
    Io(String),
}

impl From<Truncated> for EmbeddingError {
    fn from(_: Truncated) -> Self {
        EmbeddingError::TruncatedFile
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepKind {
    Mean,
    Sst,
}

impl RepKind {
    pub fn code(self) -> u8 {
        match self {
            RepKind::Mean => 0,
            RepKind::Sst => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, EmbeddingError> {
        match code {
            0 => Ok(RepKind::Mean),
            1 => Ok(RepKind::Sst),
            other => Err(EmbeddingError::BadRepKind(other)),
        }
    }
}

impl fmt::Display for RepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RepKind::Mean => "mean",
            RepKind::Sst => "sst",
        })
    }
}

/// Row-major `rows x dim` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl TokenMatrix {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDimension);
        }
        if data.len() % dim != 0 {
            return Err(EmbeddingError::DimensionMismatch {
                expected: dim,
                got: data.len() % dim,
            });
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, EmbeddingError> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(EmbeddingError::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub question_id: QuestionId,
    pub dense: Vec<f32>,
    pub tokens: Option<TokenMatrix>,
}

/// Dot product accumulated in f64, strictly in ascending index order.
#[inline]
pub fn dot(u: &[f32], v: &[f32]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let mut acc = 0.0f64;
    for (a, b) in u.iter().zip(v) {
        acc += f64::from(*a) * f64::from(*b);
    }
    acc
}

/// `1 - cos(u, v)`, clamped to `[0, 2]`.
pub fn cosine_distance(u: &[f32], v: &[f32]) -> Result<f64, EmbeddingError> {
    if u.len() != v.len() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let nu = dot(u, u);
    let nv = dot(v, v);
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    Ok(distance_from_parts(dot(u, v), nu, nv))
}

#[inline]
fn distance_from_parts(dot: f64, sq_norm_u: f64, sq_norm_v: f64) -> f64 {
    (1.0 - dot / (sq_norm_u * sq_norm_v).sqrt()).clamp(0.0, 2.0)
}

fn check_finite(id: &QuestionId, values: &[f32]) -> Result<(), EmbeddingError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(EmbeddingError::NonFinite(id.clone()))
    }
}

/// Scales `v` to unit length unless it already is within [`UNIT_NORM_TOLERANCE`].
fn normalise_in_place(id: &QuestionId, v: &mut [f32]) -> Result<(), EmbeddingError> {
    let norm = dot(v, v).sqrt();
    if norm == 0.0 {
        return Err(EmbeddingError::ZeroVector(id.clone()));
    }
    if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        for x in v.iter_mut() {
            *x = (f64::from(*x) / norm) as f32;
        }
        if v.iter().all(|x| *x == 0.0) {
            return Err(EmbeddingError::ZeroVector(id.clone()));
        }
    }
    Ok(())
}

/// Memory-resident embedding collection. Records keep file order; lookups and
/// rankings go through an id index.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    rep_kind: RepKind,
    model_tag: String,
    has_token_level: bool,
    records: Vec<EmbeddingRecord>,
    sq_norms: Vec<f64>,
    by_id: HashMap<QuestionId, usize>,
    // Record positions in ascending id order.
    id_order: Vec<u32>,
}

impl EmbeddingStore {
    /// Validates and normalises the records (dense vectors and token rows).
    pub fn new(
        dim: usize,
        rep_kind: RepKind,
        model_tag: impl Into<String>,
        mut records: Vec<EmbeddingRecord>,
    ) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDimension);
        }
        let has_token_level = records.first().is_some_and(|r| r.tokens.is_some());
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter_mut().enumerate() {
            let id = rec.question_id.clone();
            if rec.dense.len() != dim {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: dim,
                    got: rec.dense.len(),
                });
            }
            check_finite(&id, &rec.dense)?;
            normalise_in_place(&id, &mut rec.dense)?;
            if rec.tokens.is_some() != has_token_level {
                return Err(EmbeddingError::MixedTokenLevel);
            }
            if let Some(m) = rec.tokens.as_mut() {
                if m.dim != dim {
                    return Err(EmbeddingError::DimensionMismatch {
                        expected: dim,
                        got: m.dim,
                    });
                }
                if m.rows() == 0 {
                    return Err(EmbeddingError::EmptyMatrix(id));
                }
                check_finite(&id, &m.data)?;
                for row in m.data.chunks_exact_mut(dim) {
                    normalise_in_place(&id, row)?;
                }
            }
            if by_id.insert(id.clone(), i).is_some() {
                return Err(EmbeddingError::DuplicateId(id));
            }
        }
        let sq_norms = records.iter().map(|r| dot(&r.dense, &r.dense)).collect();
        let mut id_order: Vec<u32> = (0..records.len() as u32).collect();
        id_order.sort_by(|&a, &b| {
            records[a as usize]
                .question_id
                .cmp(&records[b as usize].question_id)
        });
        Ok(Self {
            dim,
            rep_kind,
            model_tag: model_tag.into(),
            has_token_level,
            records,
            sq_norms,
            by_id,
            id_order,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rep_kind(&self) -> RepKind {
        self.rep_kind
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }

    pub fn has_token_level(&self) -> bool {
        self.has_token_level
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn contains(&self, id: &QuestionId) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn get(&self, id: &QuestionId) -> Option<&EmbeddingRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    fn position(&self, id: &QuestionId) -> Result<usize, EmbeddingError> {
        self.by_id
            .get(id)
            .copied()
            .ok_or_else(|| EmbeddingError::UnknownQuestion(id.clone()))
    }

    /// Cosine distance between two stored questions.
    pub fn distance(&self, a: &QuestionId, b: &QuestionId) -> Result<f64, EmbeddingError> {
        let (i, j) = (self.position(a)?, self.position(b)?);
        Ok(self.distance_at(i, j))
    }

    #[inline]
    fn distance_at(&self, i: usize, j: usize) -> f64 {
        distance_from_parts(
            dot(&self.records[i].dense, &self.records[j].dense),
            self.sq_norms[i],
            self.sq_norms[j],
        )
    }

    pub fn tokens(&self, id: &QuestionId) -> Result<&TokenMatrix, EmbeddingError> {
        let rec = &self.records[self.position(id)?];
        rec.tokens.as_ref().ok_or(EmbeddingError::NoTokenMatrices)
    }

    /// The `k` nearest stored questions to `query_id` by cosine distance,
    /// ascending, ties by ascending id. The query itself is always excluded.
    pub fn dense_top_k(
        &self,
        query_id: &QuestionId,
        k: usize,
        exclude: &HashSet<QuestionId>,
    ) -> Result<Vec<(QuestionId, f64)>, EmbeddingError> {
        let q = self.position(query_id)?;
        let mut top = TopK::new(k);
        for (rank, &pos) in self.id_order.iter().enumerate() {
            let pos = pos as usize;
            if pos == q || exclude.contains(&self.records[pos].question_id) {
                continue;
            }
            top.push(Scored {
                score: -self.distance_at(q, pos),
                rank: rank as u32,
            });
        }
        Ok(top
            .into_sorted()
            .into_iter()
            .map(|s| {
                let pos = self.id_order[s.rank as usize] as usize;
                (self.records[pos].question_id.clone(), -s.score)
            })
            .collect())
    }

    /// Serialises to HEMB bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>, EmbeddingError> {
        let unencodable = |what: String| EmbeddingError::Unencodable(what);
        let dim = u32::try_from(self.dim).map_err(|_| unencodable("dim".into()))?;
        let tag_len = u16::try_from(self.model_tag.len())
            .map_err(|_| unencodable("model tag longer than 65535 bytes".into()))?;
        let per_record = 2 + self.dim * 4;
        let mut out = Vec::with_capacity(32 + self.model_tag.len() + self.records.len() * per_record);
        out.extend_from_slice(HEMB_MAGIC);
        put_u16(&mut out, HEMB_VERSION);
        put_u16(&mut out, if self.has_token_level { FLAG_TOKENS } else { 0 });
        put_u32(&mut out, dim);
        put_u64(&mut out, self.records.len() as u64);
        put_u16(&mut out, tag_len);
        out.extend_from_slice(self.model_tag.as_bytes());
        out.push(self.rep_kind.code());
        for rec in &self.records {
            let id_len = u16::try_from(rec.question_id.0.len())
                .map_err(|_| unencodable(format!("id {} too long", rec.question_id)))?;
            put_u16(&mut out, id_len);
            out.extend_from_slice(rec.question_id.0.as_bytes());
            put_f32s(&mut out, &rec.dense);
            if let Some(m) = &rec.tokens {
                let rows = u16::try_from(m.rows())
                    .map_err(|_| unencodable(format!("{} token rows", m.rows())))?;
                put_u16(&mut out, rows);
                put_f32s(&mut out, &m.data);
            }
        }
        Ok(out)
    }

    /// Parses HEMB bytes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbeddingError> {
        let mut r = ByteReader::new(bytes);
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if &magic != HEMB_MAGIC {
            return Err(EmbeddingError::BadMagic(magic));
        }
        let version = r.u16()?;
        if version != HEMB_VERSION {
            return Err(EmbeddingError::UnsupportedVersion(version));
        }
        let flags = r.u16()?;
        if flags & !FLAG_TOKENS != 0 {
            return Err(EmbeddingError::UnsupportedFlags(flags));
        }
        let has_tokens = flags & FLAG_TOKENS != 0;
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(EmbeddingError::ZeroDimension);
        }
        let count = r.u64()?;
        let tag_len = r.u16()? as usize;
        let model_tag = std::str::from_utf8(r.take(tag_len)?)
            .map_err(|_| EmbeddingError::InvalidUtf8("model tag"))?
            .to_string();
        let rep_kind = RepKind::from_code(r.u8()?)?;

        // Smallest possible record: empty id plus the dense vector (plus a
        // one-row token matrix when flagged).
        let min_record = 2 + dim * 4 + if has_tokens { 2 + dim * 4 } else { 0 };
        if count.saturating_mul(min_record as u64) > r.remaining() as u64 {
            return Err(EmbeddingError::TruncatedFile);
        }
        let mut records = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let id_len = r.u16()? as usize;
            let id = std::str::from_utf8(r.take(id_len)?)
                .map_err(|_| EmbeddingError::InvalidUtf8("record id"))?;
            let question_id = QuestionId::new(id);
            let mut dense = Vec::with_capacity(dim);
            r.f32s(dim, &mut dense)?;
            let tokens = if has_tokens {
                let rows = r.u16()? as usize;
                if rows == 0 {
                    return Err(EmbeddingError::EmptyMatrix(question_id));
                }
                let mut data = Vec::new();
                r.f32s(rows * dim, &mut data)?;
                Some(TokenMatrix { dim, data })
            } else {
                None
            };
            records.push(EmbeddingRecord {
                question_id,
                dense,
                tokens,
            });
        }
        if r.remaining() != 0 {
            return Err(EmbeddingError::TrailingBytes(r.remaining()));
        }
        let store = Self::new(dim, rep_kind, model_tag, records)?;
        debug_assert_eq!(r.position(), bytes.len());
        Ok(store)
    }
}

/// Reads a whole HEMB stream.
pub fn load_store<R: Read>(mut input: R) -> Result<EmbeddingStore, EmbeddingError> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| EmbeddingError::Io(e.to_string()))?;
    EmbeddingStore::from_bytes(&bytes)
}

pub fn write_store(store: &EmbeddingStore) -> Result<Vec<u8>, EmbeddingError> {
    store.to_bytes()
}

/// Free-function form of [`EmbeddingStore::dense_top_k`].
pub fn dense_top_k(
    query_id: &QuestionId,
    k: usize,
    exclude: &HashSet<QuestionId>,
    store: &EmbeddingStore,
) -> Result<Vec<(QuestionId, f64)>, EmbeddingError> {
    store.dense_top_k(query_id, k, exclude)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, dense: Vec<f32>) -> EmbeddingRecord {
        EmbeddingRecord {
            question_id: id.into(),
            dense,
            tokens: None,
        }
    }

    fn unit_store() -> EmbeddingStore {
        EmbeddingStore::new(
            2,
            RepKind::Mean,
            "test",
            vec![
                rec("a", vec![1.0, 0.0]),
                rec("b", vec![0.0, 1.0]),
                rec("c", vec![-1.0, 0.0]),
                rec("d", vec![1.0, 0.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn cosine_distance_cases() {
        let u = [0.3f32, -1.7, 2.2];
        assert_eq!(cosine_distance(&u, &u).unwrap(), 0.0);
        let neg: Vec<f32> = u.iter().map(|x| -x).collect();
        assert_eq!(cosine_distance(&u, &neg).unwrap(), 2.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(
            cosine_distance(&[1.0], &[1.0, 0.0]),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine_distance(&[0.0, 0.0], &[1.0, 0.0]),
            Err(EmbeddingError::ZeroNorm)
        ));
    }

    #[test]
    fn duplicate_vector_ranks_first_at_zero() {
        let store = unit_store();
        let hits = store.dense_top_k(&"a".into(), 10, &HashSet::new()).unwrap();
        assert_eq!(hits[0], ("d".into(), 0.0));
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[1], ("b".into(), 1.0));
        assert_eq!(hits[2], ("c".into(), 2.0));
        assert!(store
            .dense_top_k(&"zz".into(), 1, &HashSet::new())
            .is_err());
    }

    #[test]
    fn loading_normalises() {
        let store = EmbeddingStore::new(2, RepKind::Sst, "t", vec![rec("a", vec![3.0, 4.0])]).unwrap();
        assert_eq!(store.get(&"a".into()).unwrap().dense, vec![0.6, 0.8]);
    }

    #[test]
    fn zero_vector_rejected() {
        let err = EmbeddingStore::new(2, RepKind::Mean, "t", vec![rec("z", vec![0.0, 0.0])]).unwrap_err();
        assert_eq!(err, EmbeddingError::ZeroVector("z".into()));
    }

    #[test]
    fn round_trip_bytes() {
        let store = unit_store();
        let bytes = store.to_bytes().unwrap();
        let back = EmbeddingStore::from_bytes(&bytes).unwrap();
        assert_eq!(back, store);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn header_errors() {
        let bytes = unit_store().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XEMB");
        assert_eq!(
            EmbeddingStore::from_bytes(&bad).unwrap_err(),
            EmbeddingError::BadMagic(*b"XEMB")
        );
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert_eq!(
            EmbeddingStore::from_bytes(&v2).unwrap_err(),
            EmbeddingError::UnsupportedVersion(2)
        );
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert_eq!(
            EmbeddingStore::from_bytes(&trailing).unwrap_err(),
            EmbeddingError::TrailingBytes(1)
        );
        assert_eq!(
            EmbeddingStore::from_bytes(&bytes[..bytes.len() - 2]).unwrap_err(),
            EmbeddingError::TruncatedFile
        );
    }

    #[test]
    fn token_matrices_round_trip_and_validate() {
        let tokens = TokenMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let store = EmbeddingStore::new(
            2,
            RepKind::Mean,
            "m",
            vec![EmbeddingRecord {
                question_id: "a".into(),
                dense: vec![1.0, 1.0],
                tokens: Some(tokens),
            }],
        )
        .unwrap();
        assert!(store.has_token_level());
        assert_eq!(store.tokens(&"a".into()).unwrap().row(1), &[0.0, 1.0]);
        let bytes = store.to_bytes().unwrap();
        assert_eq!(bytes[6], 1);
        assert_eq!(EmbeddingStore::from_bytes(&bytes).unwrap(), store);

        let mixed = EmbeddingStore::new(
            2,
            RepKind::Mean,
            "m",
            vec![
                EmbeddingRecord {
                    question_id: "a".into(),
                    dense: vec![1.0, 1.0],
                    tokens: Some(TokenMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap()),
                },
                rec("b", vec![1.0, 0.0]),
            ],
        );
        assert_eq!(mixed.unwrap_err(), EmbeddingError::MixedTokenLevel);
    }

    #[test]
    fn non_finite_and_duplicates_rejected() {
        assert_eq!(
            EmbeddingStore::new(2, RepKind::Mean, "t", vec![rec("n", vec![f32::NAN, 1.0])]).unwrap_err(),
            EmbeddingError::NonFinite("n".into())
        );
        assert_eq!(
            EmbeddingStore::new(
                2,
                RepKind::Mean,
                "t",
                vec![rec("a", vec![1.0, 0.0]), rec("a", vec![0.0, 1.0])]
            )
            .unwrap_err(),
            EmbeddingError::DuplicateId("a".into())
        );
    }
}
