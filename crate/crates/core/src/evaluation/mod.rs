//! Topic-code evaluation of ranking runs and specialist review support.

mod metrics;
mod report;
mod review;

use thiserror::Error;

use crate::corpus::QuestionId;

pub use metrics::{
    classification_metrics, micro_f1, micro_f1_of, observed_classes, topic_match_metrics,
    topic_match_metrics_with, topic_predictions, Averaging, ClassMetrics, Metrics,
};
pub use report::{render_label_table, render_metrics_table, MetricsReport, METRIC_COLUMNS};
pub use review::{
    label_distribution, sample_for_review, Annotation, Label, LabelDistribution, LabelShare,
};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no topic code for question {0}")]
    MissingTopic(QuestionId),
    #[error("run has no ranked queries")]
    EmptyRun,
    #[error("requested {requested} pairs but only {available} are available")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("no annotations")]
    NoAnnotations,
    #[error("invalid label {0:?}; expected one of 1, 1a, 2, 3")]
    InvalidLabel(String),
}
