//! Specialist review: seeded sampling of top-1 pairs, annotations and the
//! label distribution over them.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::QuestionId;
use crate::pipeline::RankingRun;

/// Expert judgment of a (query, candidate) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    /// Exact match.
    #[serde(rename = "1")]
    Exact,
    /// Equivalent concept, different wording.
    #[serde(rename = "1a")]
    Equivalent,
    /// Same concept, mismatched sub-concept.
    #[serde(rename = "2")]
    SubConceptMismatch,
    /// Unrelated.
    #[serde(rename = "3")]
    TotalMismatch,
}

impl Label {
    pub const ALL: [Label; 4] = [
        Label::Exact,
        Label::Equivalent,
        Label::SubConceptMismatch,
        Label::TotalMismatch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Exact => "1",
            Label::Equivalent => "1a",
            Label::SubConceptMismatch => "2",
            Label::TotalMismatch => "3",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| EvalError::InvalidLabel(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub query_id: QuestionId,
    pub candidate_id: QuestionId,
    pub label: Label,
    pub annotator: String,
    pub run_id: String,
    pub timestamp: String,
}

impl Annotation {
    /// Uniqueness key: one judgment per pair, annotator and run.
    pub fn key(&self) -> (QuestionId, QuestionId, String, String) {
        (
            self.query_id.clone(),
            self.candidate_id.clone(),
            self.annotator.clone(),
            self.run_id.clone(),
        )
    }
}

/// Draws `n` distinct (query, top-1 candidate) pairs uniformly without
/// replacement. The same run, `n` and seed always give the same sample.
pub fn sample_for_review(
    run: &RankingRun,
    n: usize,
    seed: u64,
) -> Result<Vec<(QuestionId, QuestionId)>, EvalError> {
    let population: Vec<(QuestionId, QuestionId)> = run
        .per_query
        .iter()
        .filter_map(|(q, list)| list.first().map(|c| (q.clone(), c.id.clone())))
        .collect();
    if n > population.len() {
        return Err(EvalError::SampleTooLarge {
            requested: n,
            available: population.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, population.len(), n)
        .into_iter()
        .map(|i| population[i].clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelShare {
    pub label: Label,
    pub count: usize,
    /// Percentage rounded to two decimals.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub total: usize,
    /// One entry per label in `1, 1a, 2, 3` order.
    pub shares: Vec<LabelShare>,
}

impl LabelDistribution {
    pub fn percent(&self, label: Label) -> f64 {
        self.shares
            .iter()
            .find(|s| s.label == label)
            .map_or(0.0, |s| s.percent)
    }

    pub fn from_counts(counts: [usize; 4]) -> Result<Self, EvalError> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(EvalError::NoAnnotations);
        }
        let hundredths = rounded_hundredths(&counts, total);
        Ok(Self {
            total,
            shares: Label::ALL
                .into_iter()
                .zip(counts)
                .zip(hundredths)
                .map(|((label, count), h)| LabelShare {
                    label,
                    count,
                    percent: h as f64 / 100.0,
                })
                .collect(),
        })
    }
}

/// Percentages in hundredths of a percent, each rounded half-up from the exact
/// ratio. If the rounded values drift more than 0.01 from 100, the entries with
/// the largest rounding error are nudged back until the drift is at most 0.01.
fn rounded_hundredths(counts: &[usize; 4], total: usize) -> [i64; 4] {
    let total = total as i128;
    let mut out = [0i64; 4];
    // Signed rounding error per entry, in units of 1 / (2 * total) hundredths.
    let mut error = [0i128; 4];
    for (i, &c) in counts.iter().enumerate() {
        let scaled = 20_000 * c as i128;
        let h = (scaled + total) / (2 * total);
        out[i] = h as i64;
        error[i] = 2 * total * h - scaled;
    }
    let mut drift: i64 = out.iter().sum::<i64>() - 10_000;
    while drift.abs() > 1 {
        let i = if drift > 0 {
            (0..4).filter(|&i| out[i] > 0).max_by_key(|&i| (error[i], std::cmp::Reverse(i)))
        } else {
            (0..4).min_by_key(|&i| (error[i], i))
        }
        .expect("four entries");
        let step: i64 = if drift > 0 { -1 } else { 1 };
        out[i] += step;
        error[i] += 2 * total * step as i128;
        drift += step;
    }
    out
}

pub fn label_distribution<'a>(
    annotations: impl IntoIterator<Item = &'a Annotation>,
) -> Result<LabelDistribution, EvalError> {
    let mut counts = [0usize; 4];
    for a in annotations {
        let i = Label::ALL.iter().position(|l| *l == a.label).expect("closed enum");
        counts[i] += 1;
    }
    LabelDistribution::from_counts(counts)
}
