//! Survey question corpus: ingestion, validation and input-sequence rendering.
//!
//! The corpus file is UTF-8 JSON lines, one question per line:
//!
//! ```text
//! {"id":"q1","questionnaire":"Wave 3","study":"NCDS","year":1991,
//!  "text":"What is his current job?","options":[{"code":"1","label":"manager"}],
//!  "typology":"standard","topic_top":"Employment","topic_sub":null,"is_code_list":true}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_YEAR: i32 = 1900;
pub const MAX_YEAR: i32 = 2100;

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("malformed record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate question id {0}")]
    DuplicateId(QuestionId),
    #[error("question {0} has no response options")]
    NotCodeList(QuestionId),
    #[error("io error: {0}")]
    Io(String),
}

/// Opaque question identifier. Ordering is plain byte-wise string ordering and
/// is the tie-break order used by every ranking in the crate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuestionId(pub String);

impl QuestionId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for QuestionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for QuestionId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseOption {
    pub code: String,
    pub label: String,
}

impl ResponseOption {
    pub fn new(code: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Typology {
    Standard,
    Qualified,
    Compound,
}

impl FromStr for Typology {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(Self::Standard),
            "qualified" => Ok(Self::Qualified),
            "compound" => Ok(Self::Compound),
            other => Err(format!("unknown typology {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TopicCode {
    pub top_level: String,
    pub sub_topic: Option<String>,
}

impl TopicCode {
    pub fn new(top_level: impl Into<String>, sub_topic: Option<String>) -> Self {
        Self {
            top_level: top_level.into(),
            sub_topic,
        }
    }
}

impl fmt::Display for TopicCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.sub_topic {
            Some(sub) => write!(f, "{}-{}", self.top_level, sub),
            None => f.write_str(&self.top_level),
        }
    }
}

/// Optional topic hierarchy used to check that every sub-topic sits under
/// its declared top-level topic. Loaded from JSON: `{"Education": ["Primary Schooling", ...]}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TopicOntology {
    pub children: BTreeMap<String, BTreeSet<String>>,
}

impl TopicOntology {
    pub fn check(&self, topic: &TopicCode) -> Result<(), String> {
        let Some(subs) = self.children.get(&topic.top_level) else {
            return Err(format!("unknown top-level topic {:?}", topic.top_level));
        };
        match &topic.sub_topic {
            Some(sub) if !subs.contains(sub) => Err(format!(
                "sub-topic {sub:?} is not a child of {:?}",
                topic.top_level
            )),
            _ => Ok(()),
        }
    }
}

/// Serialises as one corpus-file record (flat `topic_top` / `topic_sub`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "QuestionRecord", from = "QuestionRecord")]
pub struct Question {
    pub id: QuestionId,
    pub questionnaire: String,
    pub study: String,
    pub year: i32,
    pub text: String,
    pub options: Vec<ResponseOption>,
    pub typology: Typology,
    pub topic: TopicCode,
    pub is_code_list: bool,
}

/// Wire form of a [`Question`]; field names are fixed by the corpus file format.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuestionRecord {
    id: String,
    questionnaire: String,
    study: String,
    year: i32,
    text: String,
    options: Vec<ResponseOption>,
    typology: Typology,
    topic_top: String,
    #[serde(default)]
    topic_sub: Option<String>,
    is_code_list: bool,
}

impl From<&Question> for QuestionRecord {
    fn from(q: &Question) -> Self {
        Self {
            id: q.id.0.clone(),
            questionnaire: q.questionnaire.clone(),
            study: q.study.clone(),
            year: q.year,
            text: q.text.clone(),
            options: q.options.clone(),
            typology: q.typology,
            topic_top: q.topic.top_level.clone(),
            topic_sub: q.topic.sub_topic.clone(),
            is_code_list: q.is_code_list,
        }
    }
}

impl From<Question> for QuestionRecord {
    fn from(q: Question) -> Self {
        Self::from(&q)
    }
}

impl From<QuestionRecord> for Question {
    fn from(r: QuestionRecord) -> Self {
        Self {
            id: QuestionId(r.id),
            questionnaire: r.questionnaire,
            study: r.study,
            year: r.year,
            text: r.text,
            options: r.options,
            typology: r.typology,
            topic: TopicCode::new(r.topic_top, r.topic_sub),
            is_code_list: r.is_code_list,
        }
    }
}

impl Question {
    /// Checks the per-question invariants; returns a human-readable reason on failure.
    pub fn validate(&self, ontology: Option<&TopicOntology>) -> Result<(), String> {
        if self.id.0.is_empty() {
            return Err("empty id".into());
        }
        if !(MIN_YEAR..=MAX_YEAR).contains(&self.year) {
            return Err(format!(
                "year {} outside [{MIN_YEAR}, {MAX_YEAR}]",
                self.year
            ));
        }
        if self.topic.top_level.is_empty() {
            return Err("empty topic_top".into());
        }
        if self.topic.sub_topic.as_deref() == Some("") {
            return Err("empty topic_sub (use null)".into());
        }
        if let Some(pos) = self.options.iter().position(|o| o.code.is_empty()) {
            return Err(format!("option {pos} has an empty code"));
        }
        if self.is_code_list && self.options.is_empty() {
            return Err("is_code_list is true but options are empty".into());
        }
        if let Some(ontology) = ontology {
            ontology.check(&self.topic)?;
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&QuestionRecord::from(self)).expect("question record serialises")
    }
}

/// Renders the retrieval document for a question: the wording, one space, then
/// every option as `code, label` joined by ` | ` in stored order.
pub fn build_input_sequence(q: &Question) -> Result<String, CorpusError> {
    if q.options.is_empty() {
        return Err(CorpusError::NotCodeList(q.id.clone()));
    }
    let mut out = String::with_capacity(q.text.len() + 16 * q.options.len());
    out.push_str(&q.text);
    out.push(' ');
    for (i, opt) in q.options.iter().enumerate() {
        if i > 0 {
            out.push_str(" | ");
        }
        out.push_str(&opt.code);
        out.push_str(", ");
        out.push_str(&opt.label);
    }
    Ok(out)
}

/// The union of all questionnaires. Immutable once built; preserves input order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    questions: Vec<Question>,
    by_id: HashMap<QuestionId, usize>,
    questionnaire_count: usize,
}

impl Corpus {
    pub fn from_questions(questions: Vec<Question>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(questions.len());
        for (i, q) in questions.iter().enumerate() {
            if by_id.insert(q.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(q.id.clone()));
            }
        }
        let questionnaire_count = questions
            .iter()
            .map(|q| q.questionnaire.as_str())
            .collect::<BTreeSet<_>>()
            .len();
        Ok(Self {
            questions,
            by_id,
            questionnaire_count,
        })
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn questionnaire_count(&self) -> usize {
        self.questionnaire_count
    }

    pub fn get(&self, id: &QuestionId) -> Option<&Question> {
        self.by_id.get(id).map(|&i| &self.questions[i])
    }

    pub fn contains(&self, id: &QuestionId) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn iter(&self) -> impl Iterator<Item = &Question> {
        self.questions.iter()
    }

    /// Question ids in ascending order.
    pub fn sorted_ids(&self) -> Vec<QuestionId> {
        let mut ids: Vec<QuestionId> = self.questions.iter().map(|q| q.id.clone()).collect();
        ids.sort();
        ids
    }

    /// Sub-corpus of code-list questions. The receiver is left untouched.
    pub fn filter_code_list(&self) -> Corpus {
        let kept = self
            .questions
            .iter()
            .filter(|q| q.is_code_list)
            .cloned()
            .collect();
        Corpus::from_questions(kept).expect("subset of a valid corpus is valid")
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for q in &self.questions {
            out.write_all(q.to_json_line().as_bytes())?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

pub fn parse_corpus<R: BufRead>(input: R) -> Result<Corpus, CorpusError> {
    parse_corpus_with(input, None)
}

/// Parses a JSON-lines corpus. Any malformed line rejects the whole input.
pub fn parse_corpus_with<R: BufRead>(
    input: R,
    ontology: Option<&TopicOntology>,
) -> Result<Corpus, CorpusError> {
    let mut questions = Vec::new();
    let mut seen = HashMap::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::Io(e.to_string()))?;
        let record: QuestionRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            })?;
        let question = Question::from(record);
        question
            .validate(ontology)
            .map_err(|reason| CorpusError::MalformedRecord {
                line: line_no,
                reason,
            })?;
        if seen.insert(question.id.clone(), line_no).is_some() {
            return Err(CorpusError::DuplicateId(question.id));
        }
        questions.push(question);
    }
    Corpus::from_questions(questions)
}
