use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::Corpus;
use crate::pipeline::RankingRun;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Unweighted mean over classes seen in truth or prediction.
    #[default]
    Macro,
    /// Mean weighted by each class' support in the truth labels.
    Weighted,
}

impl fmt::Display for Averaging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Averaging::Macro => "macro",
            Averaging::Weighted => "weighted",
        })
    }
}

impl FromStr for Averaging {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "macro" => Ok(Self::Macro),
            "weighted" => Ok(Self::Weighted),
            other => Err(format!("unknown averaging {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Occurrences of the class among the truth labels.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub averaging: Averaging,
    pub queries: usize,
    #[serde(rename = "precision")]
    pub macro_precision: f64,
    #[serde(rename = "recall")]
    pub macro_recall: f64,
    #[serde(rename = "f1")]
    pub macro_f1: f64,
    pub accuracy: f64,
    pub per_class: BTreeMap<String, ClassMetrics>,
}

#[derive(Default, Clone, Copy)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn confusion<'a>(pairs: &'a [(String, String)]) -> BTreeMap<&'a str, Counts> {
    let mut counts: BTreeMap<&str, Counts> = BTreeMap::new();
    for (truth, pred) in pairs {
        if truth == pred {
            counts.entry(truth).or_default().tp += 1;
        } else {
            counts.entry(truth).or_default().fn_ += 1;
            counts.entry(pred).or_default().fp += 1;
        }
    }
    counts
}

/// Single-label multi-class metrics over `(truth, prediction)` pairs.
pub fn classification_metrics(
    pairs: &[(String, String)],
    averaging: Averaging,
) -> Result<Metrics, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let n = pairs.len();
    let counts = confusion(pairs);
    let per_class: BTreeMap<String, ClassMetrics> = counts
        .iter()
        .map(|(class, c)| {
            let precision = ratio(c.tp, c.tp + c.fp);
            let recall = ratio(c.tp, c.tp + c.fn_);
            let m = ClassMetrics {
                precision,
                recall,
                f1: harmonic(precision, recall),
                support: c.tp + c.fn_,
            };
            (class.to_string(), m)
        })
        .collect();
    let (p, r, f) = match averaging {
        Averaging::Macro => {
            let m = per_class.len() as f64;
            let sum = per_class.values().fold((0.0, 0.0, 0.0), |acc, c| {
                (acc.0 + c.precision, acc.1 + c.recall, acc.2 + c.f1)
            });
            (sum.0 / m, sum.1 / m, sum.2 / m)
        }
        Averaging::Weighted => {
            let sum = per_class.values().fold((0.0, 0.0, 0.0), |acc, c| {
                let w = c.support as f64;
                (acc.0 + w * c.precision, acc.1 + w * c.recall, acc.2 + w * c.f1)
            });
            let total = n as f64;
            (sum.0 / total, sum.1 / total, sum.2 / total)
        }
    };
    let correct = counts.values().map(|c| c.tp).sum();
    Ok(Metrics {
        averaging,
        queries: n,
        macro_precision: p,
        macro_recall: r,
        macro_f1: f,
        accuracy: ratio(correct, n),
        per_class,
    })
}

/// Micro-averaged F1 from pooled counts: `2TP / (2TP + FP + FN)`.
pub fn micro_f1_of(pairs: &[(String, String)]) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let counts = confusion(pairs);
    let tp: usize = counts.values().map(|c| c.tp).sum();
    let fp: usize = counts.values().map(|c| c.fp).sum();
    let fn_: usize = counts.values().map(|c| c.fn_).sum();
    Ok(ratio(2 * tp, 2 * tp + fp + fn_))
}

/// `(truth, prediction)` top-level topics: the query's own topic against the
/// topic of its rank-1 candidate. Queries with no candidates are skipped.
pub fn topic_predictions(run: &RankingRun, corpus: &Corpus) -> Result<Vec<(String, String)>, EvalError> {
    let topic = |id| {
        corpus
            .get(id)
            .map(|q| q.topic.top_level.clone())
            .ok_or_else(|| EvalError::MissingTopic(id.clone()))
    };
    let mut pairs = Vec::with_capacity(run.per_query.len());
    for (query, list) in &run.per_query {
        if let Some(top) = list.first() {
            pairs.push((topic(query)?, topic(&top.id)?));
        }
    }
    if pairs.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    Ok(pairs)
}

pub fn topic_match_metrics(run: &RankingRun, corpus: &Corpus) -> Result<Metrics, EvalError> {
    topic_match_metrics_with(run, corpus, Averaging::Macro)
}

pub fn topic_match_metrics_with(
    run: &RankingRun,
    corpus: &Corpus,
    averaging: Averaging,
) -> Result<Metrics, EvalError> {
    classification_metrics(&topic_predictions(run, corpus)?, averaging)
}

pub fn micro_f1(run: &RankingRun, corpus: &Corpus) -> Result<f64, EvalError> {
    micro_f1_of(&topic_predictions(run, corpus)?)
}

/// Classes that appear in either column.
pub fn observed_classes(pairs: &[(String, String)]) -> BTreeSet<&str> {
    pairs
        .iter()
        .flat_map(|(t, p)| [t.as_str(), p.as_str()])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(truth: &[&str], pred: &[&str]) -> Vec<(String, String)> {
        truth
            .iter()
            .zip(pred)
            .map(|(t, p)| (t.to_string(), p.to_string()))
            .collect()
    }

    #[test]
    fn hand_computed_three_sample_case() {
        // A: tp 1, fn 1 -> P 1, R 1/2, F1 2/3.  B: tp 1, fp 1 -> P 1/2, R 1, F1 2/3.
        let p = pairs(&["A", "A", "B"], &["A", "B", "B"]);
        let m = classification_metrics(&p, Averaging::Macro).unwrap();
        assert_eq!(m.accuracy, 2.0 / 3.0);
        assert_eq!(m.macro_precision, 0.75);
        assert_eq!(m.macro_recall, 0.75);
        assert_eq!(m.macro_f1, 2.0 / 3.0);
        assert_eq!(micro_f1_of(&p).unwrap(), 2.0 / 3.0);
        assert_eq!(m.per_class["A"].support, 2);
        assert_eq!(m.per_class["B"].support, 1);
    }

    #[test]
    fn weighted_averaging() {
        let p = pairs(&["A", "A", "B"], &["A", "B", "B"]);
        let m = classification_metrics(&p, Averaging::Weighted).unwrap();
        // (2 * 1 + 1 * 0.5) / 3, (2 * 0.5 + 1 * 1) / 3
        assert!((m.macro_precision - 2.5 / 3.0).abs() < 1e-15);
        assert!((m.macro_recall - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_run() {
        let p = pairs(&["A", "B", "C"], &["A", "B", "C"]);
        let m = classification_metrics(&p, Averaging::Macro).unwrap();
        assert_eq!(
            (m.macro_precision, m.macro_recall, m.macro_f1, m.accuracy),
            (1.0, 1.0, 1.0, 1.0)
        );
        assert_eq!(micro_f1_of(&p).unwrap(), 1.0);
    }

    #[test]
    fn prediction_only_class_counts_in_macro() {
        // C is never true but is predicted: P = R = F1 = 0 and it enters the mean.
        let p = pairs(&["A", "A"], &["A", "C"]);
        let m = classification_metrics(&p, Averaging::Macro).unwrap();
        assert_eq!(m.per_class.len(), 2);
        assert_eq!(m.per_class["C"].support, 0);
        assert_eq!(m.macro_precision, 0.5);
        assert_eq!(m.macro_recall, 0.25);
    }

    #[test]
    fn empty_is_an_error() {
        assert_eq!(
            classification_metrics(&[], Averaging::Macro).unwrap_err(),
            EvalError::EmptyRun
        );
        assert_eq!(micro_f1_of(&[]).unwrap_err(), EvalError::EmptyRun);
    }
}
